"""Append-only simulation history and the kNN estimators built on it.

Entries are ``(zeta, payload)`` pairs where the payload is a raw discrepancy
(ABC) or an ``m x p`` block of summary vectors (BSL).  Neighbours are found by
exhaustive search, with ties in distance broken by insertion order.
"""

import math

import numpy as np

from .rng import DomainError

UNIFORM, LINEAR = "uniform", "linear"


def n_neighbours(n):
    """K = floor(sqrt(N)), at least 1."""
    return max(1, math.isqrt(int(n)))


def knn_weights(distances, scheme=UNIFORM):
    """Weights for ``K`` ascending neighbour distances.

    ``uniform`` gives ones; ``linear`` gives ``1 - d_n / d_K``.  When
    ``d_K == d_1`` the linear weights would all vanish, so uniform ones are
    returned instead.
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise DomainError("need at least one neighbour")
    if scheme == UNIFORM:
        return np.ones_like(d)
    if scheme != LINEAR:
        raise DomainError(f"unknown weight scheme {scheme!r}")
    if d[-1] == d[0]:
        return np.ones_like(d)
    return 1.0 - d / d[-1]


class History:
    """Growable store of parameter points and per-point payloads.

    Parameters
    ----------
    q : int
        Parameter dimension.
    payload_shape : tuple
        ``()`` for scalar discrepancies, ``(m, p)`` for summary blocks.
    capacity : int
        Initial allocation; doubled as needed.
    """

    def __init__(self, q, payload_shape=(), capacity=1024, center=None):
        self.q = int(q)
        self.payload_shape = tuple(payload_shape)
        capacity = max(int(capacity), 1)
        self._zeta = np.empty((capacity, self.q))
        self._payload = np.empty((capacity,) + self.payload_shape)
        self._n = 0
        # summary blocks also keep per-entry sums and cross-products of
        # (s - center), so weighted moments cost O(K p^2) per query
        self._blocks = len(self.payload_shape) == 2
        if self._blocks:
            p = self.payload_shape[1]
            self.center = np.zeros(p) if center is None else np.asarray(center, dtype=float)
            self._sum = np.empty((capacity, p))
            self._cross = np.empty((capacity, p * p))

    def __len__(self):
        return self._n

    @property
    def zeta(self):
        return self._zeta[:self._n]

    @property
    def payload(self):
        return self._payload[:self._n]

    def _grow(self, need):
        cap = self._zeta.shape[0]
        if need <= cap:
            return
        while cap < need:
            cap *= 2
        zeta = np.empty((cap, self.q))
        zeta[:self._n] = self.zeta
        payload = np.empty((cap,) + self.payload_shape)
        payload[:self._n] = self.payload
        self._zeta, self._payload = zeta, payload
        if self._blocks:
            sums = np.empty((cap, self._sum.shape[1]))
            sums[:self._n] = self._sum[:self._n]
            cross = np.empty((cap, self._cross.shape[1]))
            cross[:self._n] = self._cross[:self._n]
            self._sum, self._cross = sums, cross

    def _cache(self, start, blocks):
        if not self._blocks:
            return
        dev = blocks - self.center
        k = blocks.shape[0]
        self._sum[start:start + k] = dev.sum(axis=1)
        self._cross[start:start + k] = np.einsum("kjp,kjr->kpr", dev, dev).reshape(k, -1)

    def append(self, zeta, payload):
        zeta = np.asarray(zeta, dtype=float)
        payload = np.asarray(payload, dtype=float)
        if zeta.shape != (self.q,) or payload.shape != self.payload_shape:
            raise DomainError(
                f"entry shapes {zeta.shape}, {payload.shape} do not match "
                f"({self.q},), {self.payload_shape}")
        self._grow(self._n + 1)
        self._zeta[self._n] = zeta
        self._payload[self._n] = payload
        self._cache(self._n, payload[None])
        self._n += 1

    def extend(self, zetas, payloads):
        zetas = np.asarray(zetas, dtype=float)
        payloads = np.asarray(payloads, dtype=float)
        k = zetas.shape[0]
        if zetas.shape != (k, self.q) or payloads.shape != (k,) + self.payload_shape:
            raise DomainError("batch shapes do not match the history layout")
        self._grow(self._n + k)
        self._zeta[self._n:self._n + k] = zetas
        self._payload[self._n:self._n + k] = payloads
        self._cache(self._n, payloads)
        self._n += k

    def query(self, zeta, k=None):
        """Indices and distances of the ``k`` nearest entries, ascending.

        ``k`` defaults to floor(sqrt(N)).  Equal distances are ordered by
        insertion index.
        """
        n = self._n
        if k is None:
            k = n_neighbours(n)
        if not 1 <= k <= n:
            raise DomainError(f"cannot take {k} neighbours from a history of {n}")
        diff = self._zeta[:n] - np.asarray(zeta, dtype=float)
        d2 = np.einsum("ij,ij->i", diff, diff)
        if k < n:
            # every entry tied with the k-th smallest must be considered
            kth = np.partition(d2, k - 1)[k - 1]
            cand = np.flatnonzero(d2 <= kth)
        else:
            cand = np.arange(n)
        order = np.lexsort((cand, d2[cand]))[:k]
        idx = cand[order]
        return idx, np.sqrt(d2[idx])

    def h_hat(self, zeta, eps, scheme=UNIFORM):
        """kNN-weighted fraction of neighbours with discrepancy below ``eps``."""
        idx, dist = self.query(zeta)
        w = knn_weights(dist, scheme)
        return float(w @ (self._payload[idx] < eps)) / float(w.sum())

    def moments_hat(self, zeta, scheme=UNIFORM):
        """kNN-weighted mean and covariance of stored summary blocks.

        Both use the divisor ``m * sum(W)``.  The covariance is symmetrized;
        jitter is left to the Gaussian density that consumes it.
        """
        if not self._blocks:
            raise DomainError("moments need a history of summary blocks")
        idx, dist = self.query(zeta)
        w = knn_weights(dist, scheme)
        total = self.payload_shape[0] * w.sum()
        dev_mean = (w @ self._sum[idx]) / total
        p = dev_mean.size
        sigma = (w @ self._cross[idx]).reshape(p, p) / total - np.outer(dev_mean, dev_mean)
        return self.center + dev_mean, 0.5 * (sigma + sigma.T)

    def save(self, path):
        np.savez(path, zeta=self.zeta, payload=self.payload)

    @classmethod
    def load(cls, path, center=None):
        data = np.load(path)
        zeta, payload = data["zeta"], data["payload"]
        hist = cls(zeta.shape[1], payload.shape[1:], capacity=max(len(zeta), 1), center=center)
        hist.extend(zeta, payload)
        return hist


def weighted_moments(blocks, weights):
    """Mean and covariance of ``blocks`` (``K x m x p``) with per-block weights,
    both with divisor ``m * sum(weights)``."""
    blocks = np.asarray(blocks, dtype=float)
    w = np.asarray(weights, dtype=float)
    K, m, p = blocks.shape
    flat = blocks.reshape(K * m, p)
    wrep = np.repeat(w, m)
    total = m * w.sum()
    mu = wrep @ flat / total
    dev = flat - mu
    sigma = (dev * wrep[:, None]).T @ dev / total
    return mu, 0.5 * (sigma + sigma.T)
