"""Command-line driver: simulate | theory | compare | sweep | selftest.

A run is fully determined by (resolved config, master seed): trial t uses the
stream keyed master_seed + t, pooled eigenvalues are sorted before writing,
and all file writes happen on the main thread.  CSV schemas: eigenvalues file
has the single column ``lambda``; density file ``lambda,density``; solver
diagnostics ``lambda,residual,iterations``; histogram ``bin_lo,bin_hi,density``;
sweep table one row per grid cell.  ``JACSPEC_THREADS`` caps trial
parallelism.  Exit codes: 0 success, 2 config error, 3 solver
non-convergence, 4 selftest invariant failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import freeconv, measures, network, rng as rng_mod
from .freeconv import ConvergenceError
from .measures import Empirical, SpectralMeasure
from .network import ConfigError
from .nonlinearity import Nonlinearity, parse_nonlinearity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SELFTEST = 4

SWEEPABLE_FIELDS = ("depth", "gain", "sigma_b2", "q0")


@dataclass
class ExperimentConfig:
    mode: str = "compare"
    n: int = 256
    depth: int = 2
    sigma_b2: float = 0.1
    phi: str = "sin:1.0"
    q0: float | str = 1.0  # numeric, or "star" for the fixed point of the q-map
    input_variant: str = "constant_norm"  # constant_norm | iid | explicit
    input_variance: float = 1.0
    input_values: Optional[list] = None
    trials: int = 10
    lambda_min: float = 0.0
    lambda_max: float = 0.0  # 0 -> auto from the support product
    grid_points: int = 2000
    epsilon: float = 0.0  # 0 -> 2 * grid spacing
    quadrature_order: int = freeconv.DEFAULT_QUADRATURE_ORDER
    bias_convention: str = "ql"  # "ql" adds sigma_b2 in the q-map, "qlql" omits it
    output_dir: str = "jacspec_out"
    master_seed: int = 0
    self_compare: bool = False
    sweep: Optional[dict] = None
    selftest_level: str = "quick"

    def validate(self) -> None:
        problems = []
        if self.mode not in ("simulate", "theory", "compare", "sweep", "selftest"):
            problems.append(f"mode: unknown mode {self.mode!r}")
        if self.n < 1:
            problems.append(f"n: width must be >= 1, got {self.n}")
        if self.depth < 1:
            problems.append(f"depth: must be >= 1, got {self.depth}")
        if self.sigma_b2 < 0:
            problems.append(f"sigma_b2: must be >= 0, got {self.sigma_b2}")
        if self.trials < 1:
            problems.append(f"trials: must be >= 1, got {self.trials}")
        if not (isinstance(self.q0, str) and self.q0 == "star"):
            try:
                q0 = float(self.q0)
            except (TypeError, ValueError):
                problems.append(f"q0: must be a number or 'star', got {self.q0!r}")
            else:
                if q0 <= self.sigma_b2:
                    problems.append(
                        f"q0: must strictly exceed sigma_b2 = {self.sigma_b2}, got {q0}"
                    )
        if self.input_variant not in ("constant_norm", "iid", "explicit"):
            problems.append(f"input_variant: unknown variant {self.input_variant!r}")
        if self.input_variant == "explicit" and not self.input_values:
            problems.append("input_values: required for the explicit input variant")
        if self.lambda_min < 0 or (self.lambda_max and self.lambda_max <= self.lambda_min):
            problems.append(
                f"grid: need lambda_max > lambda_min >= 0, got "
                f"[{self.lambda_min}, {self.lambda_max}]"
            )
        if self.grid_points < 8:
            problems.append(f"grid_points: must be >= 8, got {self.grid_points}")
        if self.epsilon < 0:
            problems.append(f"epsilon: must be >= 0, got {self.epsilon}")
        if self.quadrature_order < 1:
            problems.append(f"quadrature_order: must be >= 1, got {self.quadrature_order}")
        if self.bias_convention not in ("ql", "qlql"):
            problems.append(
                f"bias_convention: must be 'ql' or 'qlql', got {self.bias_convention!r}"
            )
        if not 0 <= int(self.master_seed) < 2**64:
            problems.append(f"master_seed: must fit in 64 bits, got {self.master_seed}")
        if self.selftest_level not in ("quick", "full"):
            problems.append(f"selftest_level: must be quick|full, got {self.selftest_level!r}")
        try:
            parse_nonlinearity(self.phi)
        except ValueError as exc:
            problems.append(f"phi: {exc}")
        if self.mode == "sweep":
            problems.extend(self._validate_sweep())
        if problems:
            raise ConfigError("; ".join(problems))

    def _validate_sweep(self) -> list:
        problems = []
        if not isinstance(self.sweep, dict):
            problems.append("sweep: a sweep table {axes: [...], kind: theory|compare} is required")
            return problems
        axes = self.sweep.get("axes", [])
        if not 1 <= len(axes) <= 2:
            problems.append(f"sweep.axes: need exactly one or two axes, got {len(axes)}")
        for ax in axes:
            name = ax.get("field")
            if name not in SWEEPABLE_FIELDS:
                problems.append(
                    f"sweep.axes: field must be one of {SWEEPABLE_FIELDS}, got {name!r}"
                )
            if not ax.get("values"):
                problems.append(f"sweep.axes: axis {name!r} has no values")
        if self.sweep.get("kind", "theory") not in ("theory", "compare"):
            problems.append(f"sweep.kind: must be theory|compare, got {self.sweep.get('kind')!r}")
        return problems

    def resolved_phi(self) -> Nonlinearity:
        return parse_nonlinearity(self.phi)

    def resolved_q0(self, quad=None) -> float:
        if isinstance(self.q0, str) and self.q0 == "star":
            return freeconv.q_fixed_point(
                self.resolved_phi(),
                self.sigma_b2,
                quad or freeconv.gauss_hermite(self.quadrature_order),
                include_bias=self.bias_convention == "ql",
            )
        return float(self.q0)

    def network_config(self, seed: int) -> network.NetworkConfig:
        if self.input_variant == "constant_norm":
            spec = network.ConstantNorm(self.resolved_q0())
        elif self.input_variant == "iid":
            spec = network.IidFromSeed(self.input_variance)
        else:
            spec = network.ExplicitVector(np.asarray(self.input_values, dtype=float))
        return network.NetworkConfig(
            self.depth, self.n, self.sigma_b2, self.resolved_phi(), spec, seed
        )


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(ExperimentConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = ExperimentConfig(**data)
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    return cfg


def _threads() -> int:
    env = os.environ.get("JACSPEC_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Runners


def run_simulate(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> Empirical:
    """Pool eigenvalues over independent seeded trials; write CSV artifacts."""

    def one_trial(t: int) -> np.ndarray:
        net_cfg = cfg.network_config(seed=(int(cfg.master_seed) + t) % 2**64)
        trace = network.forward_pass(net_cfg)
        spectrum = network.empirical_ncm(
            network.gram_matrix(network.assemble_jacobian(trace))
        )
        return spectrum.eigenvalues

    workers = min(_threads(), cfg.trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_trial, range(cfg.trials)))
    else:
        parts = [one_trial(t) for t in range(cfg.trials)]
    pooled = Empirical(np.sort(np.concatenate(parts)))
    if out_dir is not None:
        _write_csv(out_dir / "eigenvalues.csv", "lambda", ((float(v),) for v in pooled.eigenvalues))
        top = float(pooled.eigenvalues[-1]) * (1 + 1e-9) or 1.0
        counts, edges = np.histogram(pooled.eigenvalues, bins=80, range=(0.0, top), density=True)
        _write_csv(
            out_dir / "histogram.csv",
            "bin_lo,bin_hi,density",
            ((float(a), float(b), float(d)) for a, b, d in zip(edges[:-1], edges[1:], counts)),
        )
    return pooled


def _theory_grid(cfg: ExperimentConfig, quad) -> tuple[np.ndarray, float]:
    phi = cfg.resolved_phi()
    include_bias = cfg.bias_convention == "ql"
    profile = freeconv.q_recursion(
        phi, cfg.resolved_q0(quad), cfg.sigma_b2, cfg.depth, quad, include_bias
    )
    hi = cfg.lambda_max
    if not hi:
        prod = 1.0
        for level in range(cfg.depth):
            prod *= measures.support_max(freeconv.nu_k_measure(phi, profile.values[level], quad))
        hi = 1.25 * max(prod, 1e-6)
    grid = np.linspace(cfg.lambda_min, hi, cfg.grid_points)
    eps = cfg.epsilon or 2.0 * (grid[1] - grid[0])
    return grid, eps


def run_theory(
    cfg: ExperimentConfig, out_dir: Optional[Path] = None
) -> tuple[SpectralMeasure, freeconv.QProfile]:
    """Limiting spectrum for the configured network; write density and diagnostics."""
    quad = freeconv.gauss_hermite(cfg.quadrature_order)
    phi = cfg.resolved_phi()
    include_bias = cfg.bias_convention == "ql"
    q0 = cfg.resolved_q0(quad)
    profile = freeconv.q_recursion(phi, q0, cfg.sigma_b2, cfg.depth, quad, include_bias)
    grid, eps = _theory_grid(cfg, quad)
    diagnostics: list = []
    spectrum = freeconv.depth_spectrum(
        phi, q0, cfg.sigma_b2, cfg.depth, grid, eps, quad, include_bias,
        diagnostics=diagnostics,
    )
    if out_dir is not None:
        density = (
            spectrum
            if isinstance(spectrum, measures.GridDensity)
            else freeconv.smoothed_density(spectrum, grid, eps)
        )
        _write_csv(
            out_dir / "density.csv",
            "lambda,density",
            zip(density.grid.tolist(), density.density.tolist()),
        )
        with open(out_dir / "q_profile.json", "w") as fh:
            json.dump(
                {
                    "q": profile.values.tolist(),
                    "sigma_b2": profile.sigma_b2,
                    "bias_convention": cfg.bias_convention,
                },
                fh,
                indent=2,
            )
        if diagnostics:
            res, its = diagnostics[-1]
        else:
            res, its = np.zeros(grid.size), np.zeros(grid.size, dtype=int)
        _write_csv(
            out_dir / "solver_diagnostics.csv",
            "lambda,residual,iterations",
            zip(grid.tolist(), res.tolist(), (int(i) for i in its)),
        )
    return spectrum, profile


def _metrics_dict(m: freeconv.IsometryMetrics) -> dict:
    return {"mean_sv": m.mean_sv, "var_sv": m.var_sv, "mass_within": m.mass_within}


def run_compare(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> dict:
    """Both sides plus KS distance, moment table and isometry metrics."""
    started = time.perf_counter()
    theory, profile = run_theory(cfg, out_dir)
    if cfg.self_compare:
        empirical: SpectralMeasure = theory
    else:
        empirical = run_simulate(cfg, out_dir)
    report = {
        "ks": measures.ks_distance(empirical, theory),
        "moments_empirical": [measures.moments(empirical, k) for k in range(1, 5)],
        "moments_theory": [measures.moments(theory, k) for k in range(1, 5)],
        "isometry_empirical": _metrics_dict(freeconv.isometry_metrics(empirical)),
        "isometry_theory": _metrics_dict(freeconv.isometry_metrics(theory)),
        "trials": cfg.trials,
        "n": cfg.n,
        "depth": cfg.depth,
        "phi": cfg.phi,
        "sigma_b2": cfg.sigma_b2,
        "q0": cfg.resolved_q0(),
        "bias_convention": cfg.bias_convention,
        "self_compare": cfg.self_compare,
        "master_seed": int(cfg.master_seed),
        "trial_seeds": [(int(cfg.master_seed) + t) % 2**64 for t in range(cfg.trials)],
        "wall_time_s": time.perf_counter() - started,
    }
    if out_dir is not None:
        with open(out_dir / "report.json", "w") as fh:
            json.dump(report, fh, indent=2)
    return report


def _sweep_cells(cfg: ExperimentConfig):
    axes = cfg.sweep["axes"]
    if len(axes) == 1:
        for v in axes[0]["values"]:
            yield {axes[0]["field"]: v}
    else:
        for v0 in axes[0]["values"]:
            for v1 in axes[1]["values"]:
                yield {axes[0]["field"]: v0, axes[1]["field"]: v1}


def _apply_cell(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    updates = {}
    for name, value in cell.items():
        if name == "gain":
            kind = cfg.phi.split(":")[0]
            updates["phi"] = f"{kind}:{value}"
        elif name == "depth":
            updates["depth"] = int(value)
        else:
            updates[name] = value
    out = replace(cfg, **updates)
    out.validate()
    return out


def run_sweep(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> list:
    """One theory-only or comparison row per sweep-grid cell."""
    kind = cfg.sweep.get("kind", "theory")
    rows = []
    for cell in _sweep_cells(cfg):
        cell_cfg = _apply_cell(cfg, cell)
        row = dict(cell)
        if kind == "theory":
            spectrum, profile = run_theory(cell_cfg, out_dir=None)
            iso = freeconv.isometry_metrics(spectrum)
            row.update(
                {
                    "mean_sv": iso.mean_sv,
                    "var_sv": iso.var_sv,
                    "mass_within": iso.mass_within,
                    "m1_theory": measures.moments(spectrum, 1),
                    "m2_theory": measures.moments(spectrum, 2),
                    "q_final": float(profile.values[-1]),
                }
            )
        else:
            report = run_compare(cell_cfg, out_dir=None)
            row.update(
                {
                    "ks": report["ks"],
                    "mean_sv_empirical": report["isometry_empirical"]["mean_sv"],
                    "var_sv_empirical": report["isometry_empirical"]["var_sv"],
                    "mass_within_empirical": report["isometry_empirical"]["mass_within"],
                    "mean_sv_theory": report["isometry_theory"]["mean_sv"],
                    "var_sv_theory": report["isometry_theory"]["var_sv"],
                    "mass_within_theory": report["isometry_theory"]["mass_within"],
                    "m1_empirical": report["moments_empirical"][0],
                    "m1_theory": report["moments_theory"][0],
                    "wall_time_s": report["wall_time_s"],
                }
            )
        rows.append(row)
    if out_dir is not None and rows:
        header = list(rows[0].keys())
        _write_csv(
            out_dir / "sweep.csv",
            ",".join(header),
            ([row[k] for k in header] for row in rows),
        )
    return rows


# ---------------------------------------------------------------------------
# Self-test registry


def _check(predicate: bool, detail: str) -> tuple[bool, str]:
    return bool(predicate), detail


def _selftest_checks(level: str) -> list:
    import scipy.stats

    quick = []

    def add(name, fn):
        quick.append((name, fn))

    def haar_moments():
        draws = 10_000 if level == "full" else 3000
        n = 8
        gen = rng_mod.make_rng(2024)
        acc = np.zeros((n, n))
        acc2 = np.zeros((n, n))
        for _ in range(draws):
            o = rng_mod.sample_haar_orthogonal(n, gen)
            acc += o
            acc2 += o * o
        mean = acc / draws
        mean2 = acc2 / draws
        tol1 = 4.0 / np.sqrt(n * draws)
        frac = np.mean(np.abs(mean) < tol1)
        err2 = np.max(np.abs(mean2 - 1.0 / n))
        ok = frac >= 0.95 and err2 < (5e-3 if level == "full" else 1e-2)
        return _check(ok, f"first-moment pass fraction {frac:.3f}, second-moment err {err2:.2e}")

    def orthogonality():
        gen = rng_mod.make_rng(99)
        worst_orth, worst_det = 0.0, 0.0
        for n in (1, 2, 5, 16, 33):
            o = rng_mod.sample_haar_orthogonal(n, gen)
            worst_orth = max(worst_orth, float(np.max(np.abs(o.T @ o - np.eye(n)))))
            worst_det = max(worst_det, abs(float(np.linalg.det(o)) - 1.0))
        return _check(
            worst_orth < 1e-12 and worst_det < 1e-9,
            f"orthogonality {worst_orth:.2e}, det defect {worst_det:.2e}",
        )

    def gaussian_variance():
        gen = rng_mod.make_rng(5)
        v = rng_mod.sample_gaussian_vector(100_000, 0.25, gen)
        var = float(np.var(v))
        zero = rng_mod.sample_gaussian_vector(10, 0.0, gen)
        return _check(0.24 <= var <= 0.26 and not zero.any(), f"sample variance {var:.4f}")

    def sphere_norms():
        gen = rng_mod.make_rng(6)
        x = rng_mod.sample_uniform_sphere(10_000, gen)
        return _check(abs(np.linalg.norm(x) - 1) < 1e-12, f"norm defect {abs(np.linalg.norm(x)-1):.2e}")

    def depth1_identity():
        cfg = network.NetworkConfig(1, 64, 0.05, parse_nonlinearity("sin:1.0"),
                                    network.ConstantNorm(0.8), seed=11)
        trace = network.forward_pass(cfg)
        spec = network.empirical_ncm(network.gram_matrix(network.assemble_jacobian(trace)))
        want = np.sort(trace.derivatives[0] ** 2)
        err = float(np.max(np.abs(spec.eigenvalues - want)))
        return _check(err < 1e-10, f"depth-1 spectrum defect {err:.2e}")

    def chain_rule():
        cfg = network.NetworkConfig(2, 12, 0.1, parse_nonlinearity("scalederf:1.0"),
                                    network.ConstantNorm(0.9), seed=3)
        trace = network.forward_pass(cfg)
        jac = network.assemble_jacobian(trace)
        step = 1e-5
        fd = np.empty_like(jac)
        for j in range(cfg.width):
            for sgn in (+1, -1):
                x0 = trace.x0.copy()
                x0[j] += sgn * step
                shifted = network.forward_pass(
                    replace_input(cfg, x0), weights=trace.weights, biases=trace.biases
                )
                if sgn > 0:
                    plus = shifted.activations[-1]
                else:
                    fd[:, j] = (plus - shifted.activations[-1]) / (2 * step)
        rel = float(np.linalg.norm(fd - jac) / np.linalg.norm(jac))
        return _check(rel < 1e-5, f"finite-difference relative error {rel:.2e}")

    def q_map_closed_form():
        quad = freeconv.gauss_hermite(81)
        prof = freeconv.q_recursion(parse_nonlinearity("sin:1.0"), 1.0, 0.1, 6, quad)
        q = 1.0
        worst = 0.0
        for val in prof.values[1:]:
            q = (1 - np.exp(-2 * q)) / 2 + 0.1
            worst = max(worst, abs(val - q))
        return _check(worst < 1e-12, f"closed-form defect {worst:.2e}")

    def fixed_point_class():
        d1 = measures.Atomic([1.0], [1.0])
        mix = measures.Atomic([0.25, 1.0], [0.5, 0.5])
        xis = np.linspace(1.0, 100.0, 25)
        sols = freeconv.solve_on_negative_axis(mix, d1, xis)
        support = measures.support_max(mix) * measures.support_max(d1)
        prev = np.inf
        for xi, sol in zip(xis, sols):
            trio = (sol.f_m, sol.h_k, sol.h_r)
            if any(abs(t.imag) > 1e-12 or t.real <= 0 for t in trio):
                return _check(False, f"realness/positivity broken at xi = {xi}")
            defect = max(
                abs((1 + sol.z * sol.f_m) * sol.f_m - sol.h_k * sol.h_r),
                abs(measures.stieltjes(d1, sol.z * sol.f_m / sol.h_k) - sol.h_k),
                abs(measures.stieltjes(mix, sol.z * sol.f_m / sol.h_r) - sol.h_r),
            )
            if defect > 1e-9:
                return _check(False, f"equation defect {defect:.2e} at xi = {xi}")
            if sol.f_m.real >= prev:
                return _check(False, f"monotonicity broken at xi = {xi}")
            if abs(xi * sol.f_m.real - 1.0) >= support / xi:
                return _check(False, f"far-field bound broken at xi = {xi}")
            prev = sol.f_m.real
        return _check(True, "class conditions hold on the negative axis")

    def delta_convolution():
        grid = np.linspace(0.0, 7.5, 800)
        da = measures.Atomic([2.0], [1.0])
        db = measures.Atomic([3.0], [1.0])
        dens = freeconv.free_mult_conv(da, db, grid)
        eps = 2 * (grid[1] - grid[0])
        window = 100 * eps
        mass = measures.cdf(dens, 6 + window) - measures.cdf(dens, 6 - window)
        return _check(abs(mass - 1) < 2e-2, f"lobe mass at 6 = {mass:.4f}")

    def master_depth1():
        mix = measures.Atomic([0.25, 1.0], [0.5, 0.5])
        m = freeconv.master_equation(lambda w: measures.mgf(mix, w), 1, complex(-0.2))
        want = measures.mgf(mix, -0.2)
        return _check(abs(m - want) < 1e-12, f"degenerate depth-1 defect {abs(m-want):.2e}")

    def transform_consistency():
        gen = rng_mod.make_rng(17)
        mix = measures.Atomic([0.3, 1.2, 2.5], [0.2, 0.5, 0.3])
        worst = 0.0
        for _ in range(50):
            w = complex(gen.uniform(-2, 2), gen.uniform(0.1, 2))
            lhs = measures.mgf(mix, w)
            rhs = -1 - measures.stieltjes(mix, 1 / w) / w
            worst = max(worst, abs(lhs - rhs))
        return _check(worst < 1e-10, f"worst transform-link defect {worst:.2e}")

    def ks_metric():
        fixtures = [
            measures.Atomic([0.0], [1.0]),
            measures.Atomic([1.0], [1.0]),
            measures.Atomic([1.0, 4.0], [0.5, 0.5]),
        ]
        if measures.ks_distance(fixtures[0], fixtures[1]) != 1.0:
            return _check(False, "delta0 vs delta1 should be 1")
        for a in fixtures:
            for b in fixtures:
                if abs(measures.ks_distance(a, b) - measures.ks_distance(b, a)) > 0:
                    return _check(False, "asymmetry detected")
                for c in fixtures:
                    if measures.ks_distance(a, c) > measures.ks_distance(a, b) + measures.ks_distance(b, c) + 1e-15:
                        return _check(False, "triangle inequality broken")
        return _check(True, "metric axioms hold on fixtures")

    add("rng.haar_moments", haar_moments)
    add("rng.orthogonality_det", orthogonality)
    add("rng.gaussian_variance", gaussian_variance)
    add("rng.sphere_norm", sphere_norms)
    add("network.depth1_identity", depth1_identity)
    add("network.chain_rule", chain_rule)
    add("freeconv.q_map_closed_form", q_map_closed_form)
    add("freeconv.fixed_point_class", fixed_point_class)
    add("freeconv.delta_convolution", delta_convolution)
    add("freeconv.master_depth1", master_depth1)
    add("measures.transform_consistency", transform_consistency)
    add("measures.ks_metric", ks_metric)

    if level == "full":

        def left_invariance():
            n, draws = 6, 10_000
            gen_a = rng_mod.make_rng(101)
            gen_b = rng_mod.make_rng(202)
            a = rng_mod.make_rng(7).standard_normal((n, n))
            perm = np.eye(n)[[1, 2, 0, 3, 4, 5]]  # 3-cycle, det +1
            s1 = np.array([np.trace(a @ rng_mod.sample_haar_orthogonal(n, gen_a)) for _ in range(draws)])
            s2 = np.array([np.trace(a @ perm @ rng_mod.sample_haar_orthogonal(n, gen_b)) for _ in range(draws)])
            p = scipy.stats.ks_2samp(s1, s2).pvalue
            return _check(p > 0.01, f"two-sample KS p-value {p:.4f}")

        def s_multiplicativity():
            nu_k = measures.Atomic([0.25, 1.0], [0.5, 0.5])
            nu_r = measures.Atomic([1.0, 4.0], [0.5, 0.5])
            worst = 0.0
            for m in (-0.2, -0.1):
                s_m = _extract_s_of_convolution(nu_k, nu_r, m)
                s_prod = measures.s_transform(nu_k, m) * measures.s_transform(nu_r, m)
                worst = max(worst, abs(s_m - s_prod))
            return _check(worst < 1e-6, f"worst S-transform defect {worst:.2e}")

        def mc_matrix_model():
            nu_k = measures.Atomic([0.25, 1.0], [0.5, 0.5])
            grid = np.linspace(0.0, 1.3, 1500)
            theory = freeconv.free_mult_conv(nu_k, nu_k, grid)
            n, reps = 512, 12
            stats = np.empty((reps, 4))
            for t in range(reps):
                gen = rng_mod.trial_rng(5150, t)
                k1 = np.where(gen.random(n) < 0.5, 0.25, 1.0)
                k2 = np.where(gen.random(n) < 0.5, 0.25, 1.0)
                o = rng_mod.sample_haar_orthogonal(n, gen)
                mat = (np.sqrt(k2)[:, None] * o) * k1[None, :] @ (o.T * np.sqrt(k2)[None, :])
                ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
                stats[t] = [np.mean(ev**k) for k in range(1, 5)]
            for k in range(4):
                se = stats[:, k].std(ddof=1) / np.sqrt(reps)
                gap = abs(stats[:, k].mean() - measures.moments(theory, k + 1))
                if gap > 3 * se + 1e-3:
                    return _check(False, f"moment {k+1} off by {gap:.2e} (3 SE = {3*se:.2e})")
            return _check(True, "first four moments within Monte Carlo bands")

        def compare_small():
            cfg = ExperimentConfig(
                mode="compare", n=256, depth=2, sigma_b2=0.1, phi="sin:1.0",
                q0="star", trials=5, grid_points=1200, master_seed=31,
            )
            cfg.validate()
            report = run_compare(cfg, out_dir=None)
            return _check(report["ks"] < 0.08, f"desk-scale KS = {report['ks']:.4f}")

        add("rng.left_invariance", left_invariance)
        add("freeconv.s_multiplicativity", s_multiplicativity)
        add("freeconv.mc_matrix_model", mc_matrix_model)
        add("compare.sin_depth2_small", compare_small)

    return quick


def _extract_s_of_convolution(nu_k, nu_r, m: float) -> float:
    """S-transform of nu_K boxtimes nu_R from solved transforms on the real axis."""
    from scipy.optimize import brentq

    def m_of(w: float) -> float:
        sol = freeconv.solve_on_negative_axis(nu_k, nu_r, [abs(1.0 / w)])[0]
        return float((-1 - sol.f_m / w).real)

    lo = -1e-4
    while m_of(lo) > m:
        lo *= 2
    w = brentq(lambda x: m_of(x) - m, lo, -1e-10, xtol=1e-14)
    return w * (1 + m) / m


def replace_input(cfg: network.NetworkConfig, x0: np.ndarray) -> network.NetworkConfig:
    """Same network with an explicit input vector (finite-difference probes)."""
    return network.NetworkConfig(
        cfg.depth, cfg.width, cfg.sigma_b2, cfg.phi,
        network.ExplicitVector(x0), cfg.seed,
    )


def run_selftest(level: str = "quick", corrupt: frozenset = frozenset(), stream=None) -> bool:
    """Run the invariant registry; print one PASS/FAIL line per check."""
    stream = stream or sys.stdout
    failures = 0
    hooks = []
    if "qr_sign_fix" in corrupt:
        rng_mod._SKIP_QR_SIGN_FIX = True
        hooks.append("qr_sign_fix")
    if "fhk_root" in corrupt:
        freeconv._CORRUPT_ROOT_CHOICE = True
        hooks.append("fhk_root")
    checks = _selftest_checks(level)
    try:
        for name, fn in checks:
            try:
                ok, detail = fn()
            except Exception as exc:  # a raised invariant is a failed invariant
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            status = "PASS" if ok else "FAIL"
            if not ok:
                failures += 1
            print(f"{status} {name}: {detail}", file=stream)
    finally:
        if "qr_sign_fix" in hooks:
            rng_mod._SKIP_QR_SIGN_FIX = False
        if "fhk_root" in hooks:
            freeconv._CORRUPT_ROOT_CHOICE = False
    total = len(checks)
    print(f"{'OK' if failures == 0 else 'FAILED'}: {total - failures}/{total} checks passed",
          file=stream)
    return failures == 0


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacspec",
        description="Jacobian singular-value spectra: simulation vs limiting theory.",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for name in ("simulate", "theory", "compare", "sweep", "selftest"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--seed", type=int, help="master seed (64-bit unsigned)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--trials", type=int)
        p.add_argument("--n", type=int, help="layer width")
        p.add_argument("--depth", type=int)
        p.add_argument("--phi", help="nonlinearity id:gain, e.g. sin:1.0")
        p.add_argument("--sigma-b2", type=float, dest="sigma_b2")
        p.add_argument("--q0", help="input scale q0, or 'star' for the fixed point")
        p.add_argument("--bias-convention", choices=("ql", "qlql"), dest="bias_convention")
        p.add_argument("--grid", help="lambda grid as min:max:points")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--self-compare", action="store_true", dest="self_compare", default=None)
        p.add_argument("--print-config", action="store_true")
        if name == "selftest":
            p.add_argument("--level", choices=("quick", "full"), dest="selftest_level")
    return parser


def _overrides_from_args(args: argparse.Namespace) -> dict:
    over = {
        "mode": args.mode,
        "master_seed": args.seed,
        "output_dir": args.out,
        "trials": args.trials,
        "n": args.n,
        "depth": args.depth,
        "phi": args.phi,
        "sigma_b2": args.sigma_b2,
        "bias_convention": args.bias_convention,
        "epsilon": args.epsilon,
        "self_compare": args.self_compare,
        "selftest_level": getattr(args, "selftest_level", None),
    }
    if args.q0 is not None:
        over["q0"] = args.q0 if args.q0 == "star" else float(args.q0)
    if args.grid is not None:
        try:
            lo, hi, pts = args.grid.split(":")
            over["lambda_min"] = float(lo)
            over["lambda_max"] = float(hi)
            over["grid_points"] = int(pts)
        except ValueError as exc:
            raise ConfigError(f"grid: expected min:max:points, got {args.grid!r}") from exc
    return over


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        print(json.dumps(asdict(cfg), indent=2))
    try:
        if cfg.mode == "selftest":
            return EXIT_OK if run_selftest(cfg.selftest_level) else EXIT_SELFTEST
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "resolved_config.json", "w") as fh:
            json.dump(asdict(cfg), fh, indent=2)
        if cfg.mode == "simulate":
            pooled = run_simulate(cfg, out_dir)
            print(f"pooled {pooled.eigenvalues.size} eigenvalues -> {out_dir}")
        elif cfg.mode == "theory":
            run_theory(cfg, out_dir)
            print(f"theory density -> {out_dir}")
        elif cfg.mode == "compare":
            report = run_compare(cfg, out_dir)
            print(f"ks = {report['ks']:.6f} -> {out_dir}")
        elif cfg.mode == "sweep":
            rows = run_sweep(cfg, out_dir)
            print(f"{len(rows)} sweep rows -> {out_dir}")
    except ConvergenceError as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:  # ConfigError, DomainError, RangeError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
