"""Physical least-squares baseline and the empirical reference models."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLink, OutOfRange, RankDeficient

SIGMA_FLOOR = 1e-6
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class BaselineModel:
    """Linear physical trend ``w0 + w1 log10 d + w2 r_b + w3 r_t + w4 I_dyn``.

    ``mu_res``/``sigma_res`` standardize the residuals the network learns.
    """

    w: tuple[float, float, float, float, float]
    mu_res: float
    sigma_res: float
    fit_rmse: float
    n_fit: int

    @property
    def model_id(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"w{i} = {v!r}" for i, v in enumerate(self.w)]
        lines += [
            f"mu_res = {self.mu_res!r}",
            f"sigma_res = {self.sigma_res!r}",
            f"fit_rmse = {self.fit_rmse!r}",
            f"n_fit = {self.n_fit}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BaselineModel":
        kv = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        return cls(
            w=tuple(float(kv[f"w{i}"]) for i in range(5)),
            mu_res=float(kv["mu_res"]),
            sigma_res=float(kv["sigma_res"]),
            fit_rmse=float(kv["fit_rmse"]),
            n_fit=int(kv["n_fit"]),
        )


@dataclass(frozen=True)
class ABGParams:
    alpha: float = 3.4
    beta: float = 19.2
    gamma: float = 2.3


def _design(d, r_building, r_tree, i_dyn) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DegenerateLink("link distance must be positive")
    return np.column_stack(
        [np.ones_like(d), np.log10(d), np.asarray(r_building, float), np.asarray(r_tree, float), np.asarray(i_dyn, float)]
    )


def fit_baseline(links) -> BaselineModel:
    """Ordinary least squares on rows ``(d, r_building, r_tree, I_dyn, pl_raw)``."""
    links = np.asarray(links, dtype=float)
    if links.ndim != 2 or links.shape[1] != 5 or len(links) < 5:
        raise RankDeficient("need at least 5 links of (d, r_building, r_tree, I_dyn, pl_raw)")
    X = _design(links[:, 0], links[:, 1], links[:, 2], links[:, 3])
    y = links[:, 4]
    w, _, rank, sv = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1] or sv[-1] <= sv[0] * 1e-10:
        raise RankDeficient(f"design matrix rank {rank} < 5 (collinear regressors)")
    resid = y - X @ w
    return BaselineModel(
        w=tuple(float(v) for v in w),
        mu_res=float(resid.mean()),
        sigma_res=float(max(resid.std(), SIGMA_FLOOR)),
        fit_rmse=float(np.sqrt(np.mean(resid**2))),
        n_fit=int(len(y)),
    )


def baseline_pl(model: BaselineModel, d, r_building, r_tree, i_dyn):
    X = _design(np.atleast_1d(d), np.atleast_1d(r_building), np.atleast_1d(r_tree), np.atleast_1d(i_dyn))
    out = X @ np.asarray(model.w)
    return out if np.ndim(d) else float(out[0])


def residual_target(pl_raw, pl_base, mu_res, sigma_res):
    return ((pl_raw - pl_base) - mu_res) / sigma_res


def reconstruct_pl(pl_base, residual_hat, mu_res, sigma_res):
    return pl_base + (residual_hat * sigma_res + mu_res)


def _check_link(d, fc):
    if np.any(np.asarray(d) <= 0) or np.any(np.asarray(fc) <= 0):
        raise DegenerateLink("distance and frequency must be positive")


def fspl(d, fc):
    """Free-space path loss in dB; ``d`` in meters, ``fc`` in GHz."""
    _check_link(d, fc)
    return 32.4 + 20.0 * np.log10(d) + 20.0 * np.log10(fc)


def abg(d, fc, params: ABGParams = ABGParams()):
    _check_link(d, fc)
    return 10.0 * params.alpha * np.log10(d) + params.beta + 10.0 * params.gamma * np.log10(fc)


def fit_abg(d, pl, fc: float, gamma: float = ABGParams.gamma) -> ABGParams:
    """Least-squares alpha and beta at a single carrier, gamma held fixed."""
    d = np.asarray(d, float)
    X = np.column_stack([10.0 * np.log10(d), np.ones_like(d)])
    y = np.asarray(pl, float) - 10.0 * gamma * np.log10(fc)
    (alpha, beta), *_ = np.linalg.lstsq(X, y, rcond=None)
    return ABGParams(float(alpha), float(beta), gamma)


UMI_H_BS = 10.0
UMI_H_E = 1.0


def umi_los(d3d, fc, h_ut: float = 1.5, h_bs: float = UMI_H_BS):
    """3GPP TR 38.901 UMi street-canyon LoS path loss (dB).

    The two-slope form switches at the effective breakpoint
    ``4 (h_bs - 1)(h_ut - 1) fc / c`` evaluated on the 2D distance.
    """
    _check_link(d3d, fc)
    d3d = np.asarray(d3d, float)
    d2d = np.sqrt(np.maximum(d3d**2 - (h_bs - h_ut) ** 2, 0.0))
    d_bp = 4.0 * (h_bs - UMI_H_E) * (h_ut - UMI_H_E) * fc * 1e9 / SPEED_OF_LIGHT
    pl1 = 32.4 + 21.0 * np.log10(d3d) + 20.0 * np.log10(fc)
    pl2 = 32.4 + 40.0 * np.log10(d3d) + 20.0 * np.log10(fc) - 9.5 * np.log10(d_bp**2 + (h_bs - h_ut) ** 2)
    return np.where(d2d <= d_bp, pl1, pl2)


def umi_nlos_branch(d3d, fc, h_ut: float = 1.5):
    """The NLoS expression alone, before the max with the LoS branch."""
    _check_link(d3d, fc)
    return 35.3 * np.log10(d3d) + 22.4 + 21.3 * np.log10(fc) - 0.3 * (h_ut - 1.5)


def umi_nlos(d3d, fc, h_ut: float = 1.5, h_bs: float = UMI_H_BS):
    if not 1.5 <= h_ut <= 22.5:
        raise OutOfRange(f"h_ut={h_ut} outside [1.5, 22.5] m")
    return np.maximum(umi_los(d3d, fc, h_ut, h_bs), umi_nlos_branch(d3d, fc, h_ut))
