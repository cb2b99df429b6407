"""Frequency-domain blind source separation for the two-port monitor.

The pipeline is JADE (whitening, fourth-order cumulants, joint
diagonalization of the dominant cumulant eigen-matrices), followed by
scaling recovery, transmitted/incident labeling and normalization of the
estimated mixing matrix to unit diagonal.  The calibrated baseline (SMC)
lives at the bottom of the module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import (CalibrationError, ConvergenceError, DegenerateInputError,
                     ParameterError, ScalingDegenerateError)
from .sigmodel import MixingMatrix, SpectrumFrame

MIN_BINS = 1000
JACOBI_TOL_RAD = 1e-8
JACOBI_MAX_SWEEPS = 100
COV_RATIO_FLOOR = 1e-12
CORR_FALLBACK = 0.95
# Largest cumulant eigenvalue, in units of its Gaussian sampling spread,
# below which the separation is flagged unreliable.
KURTOSIS_SIGNIFICANCE = 12.0

J2 = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
I2 = np.eye(2, dtype=np.complex128)


@dataclass(frozen=True)
class JadeOutput:
    x_tilde: np.ndarray
    a_tilde: MixingMatrix
    whitener: np.ndarray
    eigenvalue_gap: float
    cumulant_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    kurtosis_significance: float = np.inf
    sweeps: int = 0
    reliable: bool = True

    def permuted(self) -> "JadeOutput":
        """Same decomposition with the two components swapped."""
        return JadeOutput(
            self.x_tilde[::-1].copy(), MixingMatrix(self.a_tilde.a @ J2), self.whitener,
            self.eigenvalue_gap, self.cumulant_eigenvalues, self.kurtosis_significance,
            self.sweeps, self.reliable)


class Alignment(NamedTuple):
    x_hat: np.ndarray
    permutation_applied: bool
    correlation_table: np.ndarray
    alignment_method: str


@dataclass(frozen=True)
class SeparationResult:
    """Aligned estimates: row 0 is the transmitted signal, row 1 the incident one."""

    x_hat: np.ndarray
    a_hat: MixingMatrix
    permutation_applied: bool
    correlation_table: np.ndarray
    alignment_method: str
    scaling: MixingMatrix | None = None
    method: str = "fdm"
    reliable: bool = True
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "a_hat": matrix_to_json(self.a_hat.a),
            "scaling": None if self.scaling is None else matrix_to_json(self.scaling.a),
            "permutation_applied": bool(self.permutation_applied),
            "correlation_table": np.asarray(self.correlation_table, dtype=float).tolist(),
            "alignment_method": self.alignment_method,
            "reliable": bool(self.reliable),
            "num_bins": int(self.x_hat.shape[1]),
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class SmcCalibration:
    a_cal: MixingMatrix
    calibration_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a_cal.require_nonsingular()

    def to_json(self) -> str:
        return json.dumps({"a_cal": matrix_to_json(self.a_cal.a),
                           "calibration_meta": self.calibration_meta}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SmcCalibration":
        doc = json.loads(text)
        return cls(MixingMatrix(matrix_from_json(doc["a_cal"])), doc.get("calibration_meta", {}))


def matrix_to_json(a) -> list:
    """Complex matrix as nested ``[re, im]`` pairs."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(a)]


def matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def _bins(r) -> np.ndarray:
    return np.asarray(r.bins if isinstance(r, SpectrumFrame) else r, dtype=np.complex128)


def whiten(r_bar):
    """Return ``(whitener, r_tilde)`` for centered data ``r_bar`` (ports x bins)."""
    n = r_bar.shape[1]
    cov = r_bar @ r_bar.conj().T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if not evals[0] > 0 or evals[-1] / evals[0] < COV_RATIO_FLOOR:
        raise DegenerateInputError(
            f"sample covariance is numerically singular (eigenvalues {evals.tolist()})")
    whitener = np.diag(evals ** -0.5) @ evecs.conj().T
    return whitener, whitener @ r_bar


def cumulant_matrix(z) -> np.ndarray:
    """Fourth-order cross-cumulants of ``z`` arranged as a Hermitian m^2 x m^2 matrix.

    Entry ``[(i, j), (m, l)]`` holds ``Cum(z_i, z_j*, z_l, z_m*)``, so that the
    matrix acts on ``vec(M)`` like the cumulant map ``M -> Q(M)``.
    """
    m, n = z.shape
    cov = z @ z.conj().T / n
    pcov = z @ z.T / n
    q = np.empty((m * m, m * m), dtype=np.complex128)
    zc = z.conj()
    for i in range(m):
        for j in range(m):
            zij = z[i] * zc[j]
            for l in range(m):
                for mm in range(m):
                    e4 = np.mean(zij * z[l] * zc[mm])
                    q[i * m + j, mm * m + l] = (e4 - cov[i, j] * cov[l, mm]
                                                - cov[i, mm] * cov[l, j]
                                                - pcov[i, l] * np.conj(pcov[j, mm]))
    return q


def joint_diagonalize(mats, tol=JACOBI_TOL_RAD, max_sweeps=JACOBI_MAX_SWEEPS):
    """Unitary ``V`` making every ``V^H M V`` as diagonal as possible.

    Complex Jacobi (Givens) sweeps; stops when the largest rotation angle of
    a sweep falls below ``tol`` radians.

    Returns
    -------
    V : ndarray, shape (m, m)
    sweeps : int
    """
    a = np.array(mats, dtype=np.complex128, copy=True)
    m = a.shape[1]
    v = np.eye(m, dtype=np.complex128)
    b = np.array([[1, 0, 0], [0, 1, 1], [0, -1j, 1j]])
    last = np.inf
    for sweep in range(1, max_sweeps + 1):
        largest = 0.0
        for p in range(m - 1):
            for q in range(p + 1, m):
                g = np.vstack([a[:, p, p] - a[:, q, q], a[:, p, q], a[:, q, p]])
                gram = np.real(b @ (g @ g.conj().T) @ b.conj().T)
                evals, evecs = np.linalg.eigh(gram)
                ang = evecs[:, np.argmax(evals)]
                if ang[0] < 0:
                    ang = -ang
                c = np.sqrt(0.5 + ang[0] / 2)
                s = 0.5 * (ang[1] - 1j * ang[2]) / c
                theta = float(np.arcsin(min(1.0, abs(s))))
                largest = max(largest, theta)
                if theta > tol:
                    rot = np.array([[c, -np.conj(s)], [s, c]])
                    pair = [p, q]
                    v[:, pair] = v[:, pair] @ rot
                    a[:, pair, :] = np.einsum("ij,kjl->kil", rot.conj().T, a[:, pair, :])
                    a[:, :, pair] = a[:, :, pair] @ rot
        last = largest
        if largest < tol:
            return v, sweep
    raise ConvergenceError(
        f"joint diagonalization did not converge in {max_sweeps} sweeps",
        {"sweeps": max_sweeps, "last_rotation_rad": last})


def jade(r) -> JadeOutput:
    """JADE on a two-port block of frequency bins (``SpectrumFrame`` or 2xN array)."""
    data = _bins(r)
    if data.ndim != 2 or data.shape[0] != 2:
        raise ParameterError(f"jade expects 2xN data, got {data.shape}")
    n = data.shape[1]
    if n < MIN_BINS:
        raise ParameterError(f"jade needs at least {MIN_BINS} bins, got {n}")
    r_bar = data - data.mean(axis=1, keepdims=True)
    whitener, r_tilde = whiten(r_bar)

    q = cumulant_matrix(r_tilde)
    q = (q + q.conj().T) / 2
    evals, evecs = np.linalg.eigh(q)
    order = np.argsort(np.abs(evals))[::-1]
    evals, evecs = evals[order], evecs[:, order]
    eig_mats = [evals[k] * evecs[:, k].reshape(2, 2) for k in range(2)]
    u, sweeps = joint_diagonalize(eig_mats)

    x_tilde = u.conj().T @ r_tilde
    a_tilde = np.linalg.pinv(whitener) @ u
    gap = float(abs(evals[0]) / max(abs(evals[1]), np.finfo(float).tiny))
    # sampling spread of a unit-variance complex Gaussian cumulant estimate ~ 1/sqrt(n)
    significance = float(abs(evals[0]) * np.sqrt(n))
    return JadeOutput(x_tilde, MixingMatrix(a_tilde), whitener, gap, evals, significance,
                      sweeps, significance > KURTOSIS_SIGNIFICANCE)


def align_scaling(j: JadeOutput):
    """Rescale each component by the matching diagonal entry of the mixing estimate.

    Returns ``(x_hat, delta)`` with ``x_hat = delta @ x_tilde``; no permutation
    is applied.
    """
    a = j.a_tilde.a
    d = np.diag(a)
    if np.any(np.abs(d) <= 1e-12 * np.max(np.abs(a))):
        raise ScalingDegenerateError(f"near-zero diagonal in mixing estimate: {d}")
    delta = np.diag(d)
    return delta @ j.x_tilde, MixingMatrix(delta)


def magnitude_correlations(x_hat, reference) -> np.ndarray:
    """Pearson correlations ``corr(|x_hat_i|, |reference_j|)`` as a 2x2 table.

    Entries are NaN where a magnitude vector has zero variance.
    """
    mx = np.abs(np.asarray(x_hat))
    mr = np.abs(np.asarray(reference))
    table = np.full((2, 2), np.nan)
    for i in range(2):
        for k in range(2):
            a = mx[i] - mx[i].mean()
            b = mr[k] - mr[k].mean()
            den = np.sqrt(np.dot(a, a) * np.dot(b, b))
            if den > 0:
                table[i, k] = np.dot(a, b) / den
    return table


def align_permutation(x_hat, r_ref, source_powers=None) -> Alignment:
    """Label the estimates so that row 0 is the transmitted signal.

    Bin-magnitude correlations against ``r_ref`` pick the pairing; when all
    four exceed 0.95 (similar spectra) or any is undefined, the stronger
    estimate is paired with the stronger reference row instead.
    ``source_powers`` overrides the per-row power used by that fallback.
    """
    x_hat = np.asarray(x_hat)
    r_ref = np.asarray(r_ref)
    if x_hat.shape != r_ref.shape or x_hat.shape[0] != 2:
        raise ParameterError("x_hat and r_ref must both be 2xN with the same N")
    table = magnitude_correlations(x_hat, r_ref)
    if np.any(np.isnan(table)) or np.all(table > CORR_FALLBACK):
        method = "power"
        powers = (np.mean(np.abs(x_hat) ** 2, axis=1) if source_powers is None
                  else np.asarray(source_powers, dtype=float))
        i = int(np.argmax(powers))
        m = int(np.argmax(np.mean(np.abs(r_ref) ** 2, axis=1)))
    else:
        method = "correlation"
        i, m = np.unravel_index(int(np.argmax(table)), table.shape)
    swap = bool(i != m)
    out = J2.real @ x_hat if swap else x_hat.copy()
    return Alignment(out, swap, table, method)


def scaling_matrix(a_tilde: MixingMatrix, permutation_applied: bool) -> MixingMatrix:
    """Diagonal of the column-aligned mixing estimate, ``Diag(A_tilde W)``."""
    w = J2 if permutation_applied else I2
    return MixingMatrix(np.diag(np.diag(a_tilde.a @ w)))


def adjust_matrix(a_tilde: MixingMatrix, delta: MixingMatrix, permutation_applied: bool) -> MixingMatrix:
    """Final mixing estimate ``A_hat = A_tilde W delta^-1``.

    ``delta`` is the scaling applied to the aligned estimates; with
    ``delta = scaling_matrix(a_tilde, permutation_applied)`` the result has a
    unit diagonal and ``A_hat @ delta @ W^-1`` reproduces ``a_tilde``.
    """
    d = np.diag(delta.a)
    if np.any(np.abs(d) == 0):
        raise ParameterError("delta must be invertible")
    w = J2 if permutation_applied else I2
    return MixingMatrix(a_tilde.a @ w @ np.diag(1.0 / d))


def separate(r, reference: str = "ports") -> SeparationResult:
    """Blind separation of one two-port block of bins.

    ``reference`` selects what the estimates are correlated against when
    labeling: ``"ports"`` (centered port bins) or ``"whitened"``.
    """
    data = _bins(r)
    j = jade(data)
    pre_permuted = False
    try:
        x_hat, _ = align_scaling(j)
    except ScalingDegenerateError:
        j = j.permuted()
        pre_permuted = True
        x_hat, _ = align_scaling(j)

    r_bar = data - data.mean(axis=1, keepdims=True)
    if reference == "ports":
        r_ref = r_bar
    elif reference == "whitened":
        r_ref = j.whitener @ r_bar
    else:
        raise ParameterError(f"unknown correlation reference {reference!r}")
    # total contribution of each component to the observation, scale-consistent
    powers = np.sum(np.abs(j.a_tilde.a) ** 2, axis=0)
    al = align_permutation(x_hat, r_ref, powers)
    swap = al.permutation_applied
    method = al.alignment_method

    delta = scaling_matrix(j.a_tilde, swap)
    a = j.a_tilde.a
    if np.any(np.abs(np.diag(delta.a)) <= 1e-12 * np.max(np.abs(a))):
        swap = not swap
        method = "scaling"
        delta = scaling_matrix(j.a_tilde, swap)
    w = J2 if swap else I2
    x_final = delta.a @ w @ j.x_tilde
    a_hat = adjust_matrix(j.a_tilde, delta, swap)
    diagnostics = {
        "eigenvalue_gap": j.eigenvalue_gap,
        "kurtosis_significance": j.kurtosis_significance,
        "jacobi_sweeps": j.sweeps,
        "pre_permuted": pre_permuted,
        "jade_a_tilde": matrix_to_json(j.a_tilde.a),
    }
    return SeparationResult(x_final, a_hat, bool(swap != pre_permuted), al.correlation_table,
                            method, delta, "fdm", j.reliable, diagnostics)


def _active_bins(ref, floor_db):
    p = np.abs(ref) ** 2
    peak = p.max(initial=0.0)
    if not peak > 0:
        return None
    return p >= peak * 10 ** (floor_db / 10)


def _calibrate_column(known, measured, gate_db, active_floor_db, label):
    known = np.asarray(known, dtype=np.complex128).reshape(-1)
    meas = np.asarray(measured, dtype=np.complex128)
    if meas.shape != (2, known.size):
        raise ParameterError(f"{label}: measured capture must be 2x{known.size}")
    active = _active_bins(known, active_floor_db)
    if active is None:
        raise CalibrationError(f"{label}: reference source is silent")
    p_meas = np.sum(np.abs(meas) ** 2, axis=0)
    noise_floor = np.median(p_meas) / np.log(2)
    if np.mean(p_meas[active]) <= noise_floor * 10 ** (gate_db / 10):
        raise CalibrationError(
            f"{label}: active-bin power is within {gate_db} dB of the noise floor")
    k = known[active]
    return meas[:, active] @ k.conj() / np.vdot(k, k).real


def smc_calibrate(known_tx, measured, known_incident, measured2,
                  gate_db: float = 6.0, active_floor_db: float = -30.0,
                  meta: dict | None = None) -> SmcCalibration:
    """Estimate the mixing matrix from two single-source calibration captures.

    Column 0 is the least-squares ratio of ``measured`` to ``known_tx`` over
    the bins where the reference is within ``active_floor_db`` of its peak;
    column 1 comes from the incident-only capture ``measured2`` likewise.
    """
    def row0(f):
        b = _bins(f)
        return b[0] if b.ndim == 2 else b

    col0 = _calibrate_column(row0(known_tx), _bins(measured), gate_db, active_floor_db, "tx capture")
    col1 = _calibrate_column(row0(known_incident), _bins(measured2), gate_db, active_floor_db,
                             "incident capture")
    a_cal = MixingMatrix(np.column_stack([col0, col1]))
    if not a_cal.is_nonsingular:
        raise CalibrationError("calibrated matrix is singular")
    info = dict(meta or {})
    if isinstance(measured, SpectrumFrame):
        info.setdefault("center_freq_hz", measured.center_freq_hz)
    return SmcCalibration(a_cal, info)


def smc_separate(r, cal: SmcCalibration) -> SeparationResult:
    """Invert the calibrated model bin by bin.

    Estimates are reported at their home-port scale, the same convention
    :func:`separate` uses, so that the unit-diagonal ``a_hat`` maps them back
    onto the ports.
    """
    a = cal.a_cal.require_nonsingular().a
    data = _bins(r)
    d = np.diag(np.diag(a))
    a_hat = a @ np.linalg.inv(d)
    x_hat = np.linalg.solve(a_hat, data)
    return SeparationResult(x_hat, MixingMatrix(a_hat), False, np.full((2, 2), np.nan),
                            "calibration", MixingMatrix(d), "smc", True, {})
