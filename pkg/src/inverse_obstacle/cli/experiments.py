"""Reconstruction dispatch, benchmark tables and the parameter studies."""

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..forward import ScatterConfig, frechet_apply, solve_forward
from ..geometry import StarCoeffs, is_valid, relative_error
from ..inverse_classical import GNParams, LsmParams, gauss_newton, lsm_reconstruct
from ..neural import CnnArch, CnnModel, TrainConfig, evaluate, normalize, predict, train
from .datasets import NoiseParams, add_noise, derive_rng, generate_dataset, sample_coeffs

logger = logging.getLogger(__name__)

METHODS = ("gn", "lsm", "lsm-refined", "dl", "dl-refined")
METHOD_NAMES = {
    "gn": "GN",
    "lsm": "LSM prediction",
    "lsm-refined": "LSM refined",
    "dl": "DL prediction",
    "dl-refined": "DL refined",
}
SUCCESS_THRESHOLD = 0.01


class UsageError(ValueError):
    """Invalid combination of inputs (e.g. a network method without a model)."""


def reconstruct(method: str, u_meas, cfg: ScatterConfig, M: int, model: CnnModel | None = None,
                gp: GNParams = GNParams(), lp: LsmParams = LsmParams(), nn_data=None):
    """Recover shape coefficients with one of :data:`METHODS`.

    ``nn_data`` is the measurement fed to the network when it was trained on
    a coarser grid than ``u_meas``; Gauss-Newton refinement always uses
    ``u_meas``. Returns ``(coeffs, report)``.
    """
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    report = {"method": method}
    if method in ("dl", "dl-refined"):
        if model is None:
            raise UsageError(f"method {method!r} needs a trained model")
        if model.arch.M != M:
            raise UsageError(f"model predicts M={model.arch.M}, requested M={M}")
        start = predict(model, u_meas if nn_data is None else nn_data)
    elif method in ("lsm", "lsm-refined"):
        start = lsm_reconstruct(u_meas, cfg, M, lp)
    else:
        start = StarCoeffs.circle(1.0, M)
    if method in ("dl", "lsm"):
        return start, report
    result = gauss_newton(u_meas, start, cfg, gp)
    report.update(iterations=result.iterations, termination=result.termination,
                  residual=float(result.residual_history[-1]))
    return result.c_final, report


@dataclass
class BenchmarkReport:
    """Per-case relative errors; failed reconstructions count as error 1."""

    methods: list
    records: list = field(default_factory=list)

    def errors(self, method: str) -> np.ndarray:
        return np.array([r["errors"][method] for r in self.records], dtype=float)

    def mean_error(self, method: str) -> float:
        return float(np.mean(self.errors(method)))

    def fraction_below(self, method: str, threshold: float = SUCCESS_THRESHOLD) -> float:
        return float(np.mean(self.errors(method) < threshold))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric"] + [METHOD_NAMES[m] for m in self.methods])
        w.writerow(["mean relative error"] + [repr(self.mean_error(m)) for m in self.methods])
        w.writerow(["fraction below 1%"] + [repr(self.fraction_below(m)) for m in self.methods])
        return buf.getvalue()

    def cases_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["case"] + [METHOD_NAMES[m] for m in self.methods])
        for r in self.records:
            w.writerow([r["case"]] + [repr(float(r["errors"][m])) for m in self.methods])
        return buf.getvalue()

    def to_json(self) -> str:
        out = {
            "methods": [METHOD_NAMES[m] for m in self.methods],
            "mean_relative_error": {METHOD_NAMES[m]: self.mean_error(m) for m in self.methods},
            "fraction_below_1pct": {METHOD_NAMES[m]: self.fraction_below(m) for m in self.methods},
            "cases": self.records,
        }
        return json.dumps(out, indent=1)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(self.summary_csv())
        (out / "cases.csv").write_text(self.cases_csv())
        (out / "report.json").write_text(self.to_json())


def benchmark(k: float, M: int, n_cases: int = 50, model: CnnModel | None = None, seed: int = 0,
              noise: NoiseParams | None = None, aperture: str = "full", classical_n: int = 200,
              gp: GNParams = GNParams(), lp: LsmParams = LsmParams(), methods=None) -> BenchmarkReport:
    """Run every method on ``n_cases`` fresh random shapes.

    Gauss-Newton and LSM see ``classical_n x classical_n`` data; the network
    sees data on its own training grid. Without a model the network columns
    are skipped.
    """
    if methods is None:
        methods = [m for m in METHODS if model is not None or not m.startswith("dl")]
    methods = list(methods)
    if model is None and any(m.startswith("dl") for m in methods):
        raise UsageError("network methods need a trained model")
    cfg = ScatterConfig.make(k, classical_n, classical_n, aperture)
    cfg_nn = ScatterConfig.make(k, model.arch.n_t, model.arch.n_d, aperture) if model is not None else None
    report = BenchmarkReport(methods)
    sigma = 0.0 if noise is None else noise.sigma
    for case in range(n_cases):
        c_true = sample_coeffs(M, derive_rng(seed, "test-shapes", case))
        noise_rng = derive_rng(seed if noise is None else noise.seed, "noise", case)
        u_meas = add_noise(solve_forward(c_true, cfg)[0], sigma, noise_rng)
        nn_data = None
        if cfg_nn is not None:
            nn_data = add_noise(solve_forward(c_true, cfg_nn)[0], sigma, noise_rng)
        record = {"case": case, "c_true": [float(x) for x in c_true.c], "errors": {}, "failures": {}}
        for m in methods:
            try:
                c_est, info = reconstruct(m, u_meas, cfg, M, model, gp, lp, nn_data)
                record["errors"][m] = relative_error(c_est, c_true)
                if "termination" in info:
                    record.setdefault("termination", {})[m] = info["termination"]
            except Exception as exc:  # a failed case counts as 100% error
                logger.info("case %d, %s failed: %s", case, m, exc)
                record["errors"][m] = 1.0
                record["failures"][m] = f"{type(exc).__name__}: {exc}"
        report.records.append(record)
        logger.info("case %d: %s", case, {METHOD_NAMES[m]: f"{e:.2e}" for m, e in record["errors"].items()})
    return report


FRECHET_BASE = StarCoeffs.from_modes(3, 1.0, cos={3: 0.3})


def study_frechet_decay(k: float, j_max: int, n_t: int = 200, n_d: int = 200, base=FRECHET_BASE) -> np.ndarray:
    """Rows ``(j, ||dF[cos(j t)]|| / max_j ||dF[cos(j t)]||)`` for ``j = 1..j_max``."""
    if j_max < 1:
        raise ValueError("j_max must be positive")
    cfg = ScatterConfig.make(k, n_t, n_d)
    _, sol = solve_forward(base, cfg, n=max(256, 8 * j_max + 16))
    j = np.arange(1, j_max + 1)
    delta = np.cos(np.outer(sol.curve.t, j))
    cols = frechet_apply(sol, cfg, delta)
    norms = np.linalg.norm(cols.reshape(-1, j_max), axis=0)
    return np.column_stack([j, norms / norms.max()])


def landscape_directions(seed: int, M: int = 5):
    """Two random unit-norm coefficient vectors."""
    rng = derive_rng(seed, "landscape")
    c1, c2 = rng.standard_normal((2, 2 * M + 1))
    return c1 / np.linalg.norm(c1), c2 / np.linalg.norm(c2)


def study_landscape(k: float, grid_size: int = 21, extent: float = 0.3, seed: int = 0,
                    n_t: int = 64, n_d: int = 64):
    """Misfit on the plane ``c_meas + a c_1 + b c_2``.

    Returns ``(a_axis, b_axis, F)`` with ``F[i, j]`` at ``(a_i, b_j)``; NaN where
    the perturbed curve is not star-shaped.
    """
    cfg = ScatterConfig.make(k, n_t, n_d)
    c_meas = StarCoeffs.from_modes(5, 1.0, cos={3: 0.3}).c
    c1, c2 = landscape_directions(seed)
    u_meas = solve_forward(c_meas, cfg)[0]
    ax = np.linspace(-extent, extent, grid_size)
    F = np.full((grid_size, grid_size), np.nan)
    for i, a in enumerate(ax):
        for j, b in enumerate(ax):
            c = c_meas + a * c1 + b * c2
            if a == 0 and b == 0:
                F[i, j] = 0.0
            elif is_valid(c):
                F[i, j] = np.linalg.norm(u_meas - solve_forward(c, cfg)[0])
    return ax, ax.copy(), F


def count_local_minima(F: np.ndarray) -> int:
    """Interior grid points strictly below all eight neighbours (NaN neighbours disqualify)."""
    F = np.asarray(F, dtype=float)
    count = 0
    for i in range(1, F.shape[0] - 1):
        for j in range(1, F.shape[1] - 1):
            block = F[i - 1 : i + 2, j - 1 : j + 2]
            if np.isnan(block).any():
                continue
            others = np.delete(block.ravel(), 4)
            count += bool(np.all(block[1, 1] < others))
    return count


@dataclass
class ScalingRow:
    k: float
    M: int
    threshold: int | None
    sizes: list
    errors: list

    @property
    def budget_exceeded(self) -> bool:
        return self.threshold is None


def scaling_arch(M: int, n: int = 100) -> CnnArch:
    return CnnArch(n, n, M, n_c=max(M, 1), p=4, fc_widths=(50 * max(M, 1), 10 * max(M, 1)))


def study_scaling(k_list, eps_v: float = 0.05, sizes=(16, 32, 64, 128, 256, 512), epochs: int = 1000,
                  n_val: int = 500, seed: int = 0, n: int = 100, trials: int = 1, lr: float = 0.02) -> list:
    """Smallest training-set size whose mean validation error is at most ``eps_v``.

    ``M = k - 10`` for each wavenumber. Training sets are nested prefixes of
    one sample stream; the validation set is fixed per ``(k, M)``. A row with
    ``threshold=None`` means no tested size reached the target. The default
    ``lr`` sits below the benchmark networks' 0.16, which diverges on these
    100 x 100 inputs; it is halved for the tail epochs.
    """
    rows = []
    for k in k_list:
        M = int(round(k)) - 10
        if M < 0:
            raise ValueError(f"k={k} gives a negative Fourier content")
        cfg = ScatterConfig.make(k, n, n)
        train_ds = generate_dataset(k, M, max(sizes), cfg, derive_rng(seed, "scaling-train", M).integers(2**31))
        val_ds = generate_dataset(k, M, n_val, cfg, derive_rng(seed, "scaling-val", M).integers(2**31))
        arch = scaling_arch(M, n)
        row = ScalingRow(k, M, None, [], [])
        for size in sizes:
            errs = []
            for trial in range(trials):
                X, mu, sigma0 = normalize(train_ds.data[:size].real)
                tc = TrainConfig(epochs=epochs, batch_size=min(100, size), lr=lr, lr_tail=lr / 2,
                                 seed=seed + 1000 * trial + size)
                model = train(X, train_ds.coeffs[:size], arch, tc, mu, sigma0).model
                errs.append(float(evaluate(model, (val_ds.data.real - mu) / sigma0, val_ds.coeffs).mean()))
            row.sizes.append(size)
            row.errors.append(float(np.mean(errs)))
            logger.info("scaling k=%g M=%d N_train=%d: validation error %.4f", k, M, size, row.errors[-1])
            if row.errors[-1] <= eps_v:
                row.threshold = size
                break
        rows.append(row)
    return rows


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, (str, int)) else repr(float(x)) for x in r])
