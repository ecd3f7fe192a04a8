"""Compiled inner loops. Random numbers are drawn by the caller and passed in
so that a chain depends only on its numpy Generator."""

import math

import numba
import numpy as np

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@numba.njit(cache=True)
def _cont_log_pred(x, n, s, ss, lam0, m0, nu0, kappa0, lg_ratio):
    # Student-t predictive of the Normal/NIG auxiliary model given (n, sum, sumsq)
    lamn = lam0 + n
    mn = (lam0 * m0 + s) / lamn
    an = nu0 + 0.5 * n
    bn = kappa0 + 0.5 * (ss + lam0 * m0 * m0 - lamn * mn * mn)
    if bn < 1e-300:
        bn = 1e-300
    t = 2.0 * bn * (lamn + 1.0) / lamn
    d = x - mn
    return lg_ratio - 0.5 * math.log(math.pi * t) - (an + 0.5) * math.log1p(d * d / t)


@numba.njit(cache=True)
def _build_stats(labels, k, Xc, Xq, lmax):
    m = labels.shape[0]
    pc = Xc.shape[1]
    pq = Xq.shape[1]
    cap = m + 1
    sizes = np.zeros(cap, np.int64)
    csum = np.zeros((cap, pc))
    css = np.zeros((cap, pc))
    ccount = np.zeros((cap, pq, lmax), np.int64)
    for i in range(m):
        c = labels[i]
        sizes[c] += 1
        for l in range(pc):
            v = Xc[i, l]
            csum[c, l] += v
            css[c, l] += v * v
        for l in range(pq):
            ccount[c, l, Xq[i, l]] += 1
    return sizes, csum, css, ccount


@numba.njit(cache=True)
def sweep_labels(y, Xc, Xq, nlev, labels, mu, sig, k,
                 coh_code, log_M, m0, k0, nu0, kappa0, alpha,
                 mu0, sig0, A, n_aux, use_lik, lg_ratio,
                 aux_normals, aux_uniforms, u_choice):
    """One Gibbs scan over all units with auxiliary parameters (n_aux of them)
    standing in for empty clusters.

    ``labels`` (0-based), ``mu`` and ``sig`` (capacity m+1) are updated in
    place; the new number of clusters is returned. ``lg_ratio[n]`` holds
    lgamma(nu0 + n/2 + 1/2) - lgamma(nu0 + n/2).
    """
    m = labels.shape[0]
    pc = Xc.shape[1]
    pq = Xq.shape[1]
    lmax = 1
    for l in range(pq):
        if nlev[l] > lmax:
            lmax = nlev[l]
    sizes, csum, css, ccount = _build_stats(labels, k, Xc, Xq, lmax)
    lam0 = 1.0 / k0
    logw = np.empty(m + 1 + n_aux)
    aux_mu = np.empty(n_aux)
    aux_sig = np.empty(n_aux)

    for i in range(m):
        c = labels[i]
        sizes[c] -= 1
        for l in range(pc):
            v = Xc[i, l]
            csum[c, l] -= v
            css[c, l] -= v * v
        for l in range(pq):
            ccount[c, l, Xq[i, l]] -= 1

        singleton = sizes[c] == 0
        if singleton:
            aux_mu[0] = mu[c]
            aux_sig[0] = sig[c]
            last = k - 1
            if c != last:
                # move the last cluster into slot c
                sizes[c] = sizes[last]
                mu[c] = mu[last]
                sig[c] = sig[last]
                for l in range(pc):
                    csum[c, l] = csum[last, l]
                    css[c, l] = css[last, l]
                for l in range(pq):
                    for v in range(lmax):
                        ccount[c, l, v] = ccount[last, l, v]
                for u in range(m):
                    if labels[u] == last:
                        labels[u] = c
            sizes[last] = 0
            for l in range(pc):
                csum[last, l] = 0.0
                css[last, l] = 0.0
            for l in range(pq):
                for v in range(lmax):
                    ccount[last, l, v] = 0
            k -= 1
        start = 1 if singleton else 0
        for h in range(start, n_aux):
            aux_mu[h] = mu0 + sig0 * aux_normals[i, h]
            aux_sig[h] = A * aux_uniforms[i, h]
            if aux_sig[h] <= 0.0:
                aux_sig[h] = 1e-300

        yi = y[i]
        # existing clusters
        for j in range(k):
            w = 0.0
            if coh_code == 0:
                w += math.log(sizes[j])
            for l in range(pc):
                w += _cont_log_pred(Xc[i, l], sizes[j], csum[j, l], css[j, l],
                                    lam0, m0, nu0, kappa0, lg_ratio[sizes[j]])
            for l in range(pq):
                L = nlev[l]
                w += math.log(alpha + ccount[j, l, Xq[i, l]]) - math.log(L * alpha + sizes[j])
            if use_lik:
                d = (yi - mu[j]) / sig[j]
                w += -_HALF_LOG_2PI - math.log(sig[j]) - 0.5 * d * d
            logw[j] = w
        # empty-cluster candidates share the singleton prior weight
        wnew = -math.log(n_aux)
        if coh_code == 0:
            wnew += log_M
        for l in range(pc):
            wnew += _cont_log_pred(Xc[i, l], 0, 0.0, 0.0, lam0, m0, nu0, kappa0, lg_ratio[0])
        for l in range(pq):
            wnew += -math.log(nlev[l])
        for h in range(n_aux):
            w = wnew
            if use_lik:
                d = (yi - aux_mu[h]) / aux_sig[h]
                w += -_HALF_LOG_2PI - math.log(aux_sig[h]) - 0.5 * d * d
            logw[k + h] = w

        nw = k + n_aux
        mx = logw[0]
        for j in range(1, nw):
            if logw[j] > mx:
                mx = logw[j]
        tot = 0.0
        for j in range(nw):
            logw[j] = math.exp(logw[j] - mx)
            tot += logw[j]
        u = u_choice[i] * tot
        acc = 0.0
        pick = nw - 1
        for j in range(nw):
            acc += logw[j]
            if u < acc:
                pick = j
                break

        if pick >= k:
            h = pick - k
            mu[k] = aux_mu[h]
            sig[k] = aux_sig[h]
            pick = k
            k += 1
        labels[i] = pick
        sizes[pick] += 1
        for l in range(pc):
            v = Xc[i, l]
            csum[pick, l] += v
            css[pick, l] += v * v
        for l in range(pq):
            ccount[pick, l, Xq[i, l]] += 1
    return k
