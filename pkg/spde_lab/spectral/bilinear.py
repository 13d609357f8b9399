"""
Leray-projected convective nonlinearity b(x,y) = -P((x . grad) y)

The product is formed in coefficient space by an exact sum over the
retained triads p + q = k, so no dealiasing is involved.
"""

from typing import Dict, Tuple

import numpy as np
from scipy import sparse

from ..exceptions import InvalidArgumentError, ResourceLimitError
from .space import GalerkinSpace, SpectralField, build_space

MAX_DIRECT_PAIRS = 200_000


def smooth_cutoff(s):
    """
    C^2 cutoff: 1 on [0,1], quintic smoothstep decay on [1,2], 0 beyond

    theta(s) = 1 - (6u^5 - 15u^4 + 10u^3), u = s - 1
    """
    u = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
    return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


class BilinearWorkspace:
    """
    Triad tables for b_m on one GalerkinSpace

    Holds the interacting pairs (p, q) whose sum lands back in the space,
    which is exactly the re-projection b_m(x) = P_m b(P_m x).
    """

    def __init__(self, space: GalerkinSpace):
        self.space = space
        k = space.wavevectors
        sums = k[:, None, :] + k[None, :, :]
        inside = np.all(np.abs(sums) <= space.cutoff, axis=2) & np.any(sums != 0, axis=2)
        ip, iq = np.nonzero(inside)
        ik = np.array([space.index_of(s) for s in sums[ip, iq]], dtype=np.int64)

        self.ip = ip
        self.iq = iq
        self.ik = ik
        self.q = k[iq].astype(float)
        self.n_pairs = len(ip)
        self._scatter = sparse.csr_matrix(
            (np.ones(self.n_pairs), (ik, np.arange(self.n_pairs))),
            shape=(space.n_modes, self.n_pairs),
        )

    def __repr__(self) -> str:
        return f"BilinearWorkspace(cutoff={self.space.cutoff}, pairs={self.n_pairs})"

    def apply(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        b_m(x, y) on coefficient arrays of shape (..., n_modes, 3)

        Leading batch axes of x and y must match.
        """
        batch = x.shape[:-2]
        advect = 1j * np.einsum("...pj,pj->...p", x[..., self.ip, :], self.q)
        terms = advect[..., None] * y[..., self.iq, :]
        flat = np.moveaxis(terms.reshape(-1, self.n_pairs, 3), 1, 0).reshape(self.n_pairs, -1)
        gathered = self._scatter @ flat
        conv = np.moveaxis(gathered.reshape(self.space.n_modes, -1, 3), 0, 1).reshape(*batch, self.space.n_modes, 3)
        return -self.space.leray_project(conv)

    def apply_cutoff(self, x: np.ndarray, radius: float) -> np.ndarray:
        """theta(|Ax|/R) b_m(x, x) on coefficient arrays"""
        a_norm = np.sqrt(self.space.norm_sq(x, 1.0))
        weight = smooth_cutoff(a_norm / radius)
        return weight[..., None, None] * self.apply(x, x)


_WORKSPACES: Dict[int, BilinearWorkspace] = {}


def workspace_for(space: GalerkinSpace) -> BilinearWorkspace:
    """Per-process cached workspace; tables are read-only after construction"""
    if space.cutoff not in _WORKSPACES:
        _WORKSPACES[space.cutoff] = BilinearWorkspace(space)
    return _WORKSPACES[space.cutoff]


def _check_support(field: SpectralField, ws: BilinearWorkspace, name: str) -> None:
    if field.space != ws.space:
        raise InvalidArgumentError(
            f"{name} lives on cutoff {field.space.cutoff}, workspace expects cutoff {ws.space.cutoff}"
        )


def bilinear(x: SpectralField, y: SpectralField, ws: BilinearWorkspace) -> SpectralField:
    """b_m(x, y) = -P_m P((x . grad) y)"""
    _check_support(x, ws, "x")
    _check_support(y, ws, "y")
    return SpectralField(ws.space, ws.apply(x.coeffs, y.coeffs))


def cutoff_bilinear(x: SpectralField, R: float, ws: BilinearWorkspace) -> SpectralField:
    """b_R(x) = theta(|Ax|/R) b_m(x, x)"""
    if R <= 0:
        raise InvalidArgumentError(f"cutoff radius must be > 0, got {R}")
    _check_support(x, ws, "x")
    return SpectralField(ws.space, ws.apply_cutoff(x.coeffs, R))


def _direct_sum(x: SpectralField, y: SpectralField, divergence_form: bool) -> SpectralField:
    xs = [(k, c) for k, c in zip(x.space.mode_list, x.coeffs) if np.any(c != 0)]
    ys = [(k, c) for k, c in zip(y.space.mode_list, y.coeffs) if np.any(c != 0)]
    if len(xs) * len(ys) > MAX_DIRECT_PAIRS:
        raise ResourceLimitError(
            f"direct evaluation over {len(xs)} x {len(ys)} mode pairs exceeds {MAX_DIRECT_PAIRS}"
        )

    full = build_space(2 * max(x.space.cutoff, y.space.cutoff))
    acc: Dict[Tuple[int, int, int], np.ndarray] = {}
    for p, xp in xs:
        for q, yq in ys:
            k = (p[0] + q[0], p[1] + q[1], p[2] + q[2])
            if k == (0, 0, 0):
                continue
            wave = k if divergence_form else q
            dot = xp[0] * wave[0] + xp[1] * wave[1] + xp[2] * wave[2]
            acc[k] = acc.get(k, 0) + 1j * dot * yq

    coeffs = full.zeros()
    for k, value in acc.items():
        coeffs[full.index_of(k)] = value
    return SpectralField(full, -full.leray_project(coeffs))


def bilinear_direct(x: SpectralField, y: SpectralField) -> SpectralField:
    """
    Untruncated -P((x . grad) y) by an explicit double sum over mode pairs

    The result lives on the space of twice the input cutoff, so it carries
    the full product; project it to compare against bilinear.
    """
    return _direct_sum(x, y, divergence_form=False)


def symmetric_divergence_direct(x: SpectralField, y: SpectralField) -> SpectralField:
    """-P div(x (x) y + y (x) x), evaluated directly in divergence form"""
    return _direct_sum(x, y, divergence_form=True) + _direct_sum(y, x, divergence_form=True)
