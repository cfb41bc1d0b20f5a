"""Seeded ensemble execution, model validation and plot-data export.

Trajectory ``i`` draws from ``numpy.random.default_rng(base_seed XOR splitmix64(i))``,
so adding trajectories never perturbs existing ones and results do not
depend on how trajectories are distributed over worker processes.

Files written by :func:`run_ensemble` into ``output_dir``:

``trajectories.csv``
    ``trajectory_id, step, outcome, u, pop_0 .. pop_{d-1}`` and, with
    diagnostics enabled, ``Q1, Q2, W_eps``. Step 0 is the initial state
    with empty ``outcome`` and ``u``.
``fidelity_curve.csv``
    ``step, mean, p5, p95`` of the target population across trajectories.
``sigma.csv``
    ``n, sigma, lambda`` (closed loop only).
``summary.json``
    Aggregates, convergence estimates and provenance.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import DensityMatrix, HermitianOperator, basis_state, make_density, make_hermitian, maximally_mixed, populations
from .errors import ConfigError, HypothesisViolation, QNDError
from .feedback import ClosedLoopContext, ControlModel, run_closed_trajectory
from .lyapunov import LyapunovWeights, connectivity_graph, epsilon_max, gap_vector, laplacian, solve_sigma
from .measurement import KrausSet, load_kraus_json, parse_complex_matrix, validate_kraus
from .openloop import ConvergenceCriterion, TrajectoryRecord, run_open_trajectory
from . import photonbox

MASK64 = (1 << 64) - 1

TRAJECTORIES_CSV = "trajectories.csv"
SUMMARY_JSON = "summary.json"
FIDELITY_CSV = "fidelity_curve.csv"
SIGMA_CSV = "sigma.csv"


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(base_seed: int, trajectory_id: int) -> int:
    return (int(base_seed) ^ splitmix64(int(trajectory_id))) & MASK64


@dataclass
class SimulationConfig:
    preset: str | None = "photonbox"
    hamiltonian: str | None = None
    kraus: str | None = None
    mode: str = "closed"
    controller: str = "quadratic"
    trajectories: int = 100
    steps: int = 200
    seed: int = 0
    output_dir: str = "out"
    snapshot_every: int = 50
    workers: int = 1
    diagnostics: bool = False
    stop_on_convergence: bool = False
    # model parameters; None means "use the preset default"
    target: int | None = None
    epsilon: float | None = None
    u_bound: float | None = None
    lambda_gaps: float | None = None
    n_max: int | None = None
    theta: float | None = None
    phi0: float | None = None
    alpha: float | None = None
    initial: str | None = None
    threshold: float = 0.999
    patience: int = 10

    def __post_init__(self):
        if self.trajectories < 1 or self.steps < 1:
            raise ConfigError("trajectories and steps must be >= 1")
        if self.mode not in ("open", "closed"):
            raise ConfigError(f"mode must be 'open' or 'closed', got {self.mode!r}")
        if self.controller not in ("exact", "quadratic"):
            raise ConfigError(f"controller must be 'exact' or 'quadratic', got {self.controller!r}")
        if self.preset is None and self.hamiltonian is None and self.kraus is None:
            raise ConfigError("either a preset or model files are required")
        if self.preset not in (None, "photonbox"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        for p in (self.hamiltonian, self.kraus):
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"file not found: {p}")

    def to_dict(self) -> dict:
        return asdict(self)


_ALIASES = {"out": "output_dir", "lambda": "lambda_gaps", "base_seed": "seed", "model": "preset"}


def _coerce(name: str, raw):
    typ = {f.name: f.type for f in fields(SimulationConfig)}[name]
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "null")):
        return None
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if typ.startswith("int"):
            return int(raw, 0)
        if typ.startswith("float"):
            return float(raw)
        if typ.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_config(*mappings) -> SimulationConfig:
    """Merge mappings left to right (later wins) into a validated config."""
    names = {f.name for f in fields(SimulationConfig)}
    merged = {}
    for m in mappings:
        for k, v in m.items():
            k = _ALIASES.get(k.replace("-", "_"), k.replace("-", "_"))
            if k not in names:
                raise ConfigError(f"unknown config key {k!r}")
            merged[k] = _coerce(k, v)
    return SimulationConfig(**merged)


@dataclass
class Model:
    kraus: KrausSet
    rho0: DensityMatrix
    context: ClosedLoopContext | None
    target: int

    @property
    def dim(self) -> int:
        return self.kraus.dim


def _photonbox_params(cfg: SimulationConfig) -> photonbox.PhotonBoxParams:
    kw = {}
    for name in ("n_max", "target", "theta", "phi0", "epsilon", "u_bound", "alpha"):
        v = getattr(cfg, name)
        if v is not None:
            kw[name] = v
    if cfg.lambda_gaps is not None:
        kw["lambda_gaps"] = cfg.lambda_gaps
    kw["mode"] = cfg.controller
    return photonbox.PhotonBoxParams(**kw)


def _initial_state(spec: str | None, dim: int, default: DensityMatrix) -> DensityMatrix:
    if spec is None or spec == "default":
        return default
    if spec == "mixed":
        return maximally_mixed(dim)
    if spec.startswith("basis:"):
        return basis_state(int(spec.split(":", 1)[1]), dim)
    if spec.startswith("coherent:"):
        return photonbox.coherent_init(dim - 1, float(spec.split(":", 1)[1]))
    p = Path(spec)
    if p.is_file():
        return make_density(parse_complex_matrix(json.loads(p.read_text()), dim))
    raise ConfigError(f"cannot interpret initial state {spec!r}")


def load_hamiltonian(path) -> HermitianOperator:
    doc = json.loads(Path(path).read_text())
    rows = doc["matrix"] if isinstance(doc, dict) else doc
    return make_hermitian(parse_complex_matrix(rows))


def build_model(cfg: SimulationConfig) -> Model:
    """Materialize the configured model.

    Raises:
        HypothesisViolation: a hypothesis of the stabilization result fails.
    """
    if cfg.preset == "photonbox":
        params = _photonbox_params(cfg)
        kraus = photonbox.photonbox_kraus(params)
        ctx = photonbox.build_context(params) if cfg.mode == "closed" else None
        rho0 = _initial_state(cfg.initial, params.dim, photonbox.initial_state(params))
        return Model(kraus, rho0, ctx, params.target)

    if cfg.kraus is None:
        raise ConfigError("a Kraus file is required without a preset")
    if cfg.mode == "closed" and cfg.hamiltonian is None:
        raise ConfigError("closed loop without a preset needs a Hamiltonian file")
    report = load_kraus_json(cfg.kraus)
    if not report.ok:
        raise HypothesisViolation("; ".join(v.detail for v in report.violations))
    kraus = report.kraus
    d = kraus.dim
    target = cfg.target if cfg.target is not None else 0
    rho0 = _initial_state(cfg.initial, d, maximally_mixed(d))
    ctx = None
    if cfg.mode == "closed":
        H = load_hamiltonian(cfg.hamiltonian)
        g = connectivity_graph(H)
        if not g.connected:
            raise HypothesisViolation(f"coupling graph of H is disconnected: {g.components()}")
        lam = gap_vector(cfg.lambda_gaps if cfg.lambda_gaps is not None else 1.0, target, d)
        sigma = solve_sigma(laplacian(H), lam, target)
        eps_sup = epsilon_max(H, lam, target)
        eps = cfg.epsilon if cfg.epsilon is not None else (1.0 if math.isinf(eps_sup) else eps_sup / 2)
        if not 0 < eps < eps_sup:
            raise HypothesisViolation(f"epsilon={eps} must lie in (0, {eps_sup})")
        weights = LyapunovWeights(target, lam, sigma, eps, float(np.max(np.abs(laplacian(H) @ sigma + lam))))
        ub = cfg.u_bound if cfg.u_bound is not None else 0.1
        ctx = ClosedLoopContext(kraus, ControlModel(H, ub, cfg.controller), weights)
    return Model(kraus, rho0, ctx, target)


def validate_model(cfg: SimulationConfig) -> dict:
    """Check every modelling hypothesis separately; never raises for a failed check.

    Returns:
        ``{check_name: {"ok": bool, "detail": str}}``.
    """
    checks = {}

    def put(name, ok, detail=""):
        checks[name] = {"ok": bool(ok), "detail": detail}

    if cfg.preset == "photonbox":
        kw = {}
        for name in ("n_max", "target", "theta", "phi0", "u_bound", "alpha"):
            if getattr(cfg, name) is not None:
                kw[name] = getattr(cfg, name)
        if cfg.lambda_gaps is not None:
            kw["lambda_gaps"] = cfg.lambda_gaps
        base = photonbox.PhotonBoxParams(**kw)
        eps = cfg.epsilon if cfg.epsilon is not None else base.epsilon
        c = photonbox.kraus_coefficients(base.n_max, base.theta, base.phi0)
        ops = [np.diag(row) for row in c]
        H = photonbox.displacement_hamiltonian(base.n_max)
        target, lam_raw = base.target, base.lambda_gaps
        uniform = photonbox.uniform_epsilon_bound(base.n_max)
    else:
        if cfg.kraus is None:
            raise ConfigError("a Kraus file is required without a preset")
        doc = json.loads(Path(cfg.kraus).read_text())
        ops = [parse_complex_matrix(op, int(doc["dim"])) for op in doc["operators"]]
        H = load_hamiltonian(cfg.hamiltonian) if cfg.hamiltonian else None
        target = cfg.target if cfg.target is not None else 0
        lam_raw = cfg.lambda_gaps if cfg.lambda_gaps is not None else 1.0
        eps = cfg.epsilon
        uniform = None

    rep = validate_kraus(ops)
    for name in ("completeness", "diagonality", "distinguishability"):
        bad = rep.failed(name)
        put(name, not bad, "; ".join(v.detail for v in bad))
    if H is None:
        return checks

    g = connectivity_graph(H)
    put("connectivity", g.connected, "" if g.connected else f"components: {g.components()}")
    d = H.dim if isinstance(H, HermitianOperator) else len(H)
    lam = gap_vector(lam_raw, target, d)
    eps_sup = epsilon_max(H, lam, target)
    if eps is None:
        eps = eps_sup / 2 if math.isfinite(eps_sup) else 1.0
    bound = min(eps_sup, uniform) if uniform is not None else eps_sup
    put("epsilon_bound", 0 < eps < bound, f"epsilon={eps:g}, bound={bound:g} (per-state {eps_sup:g})")
    if g.connected:
        R = laplacian(H)
        sigma = solve_sigma(R, lam, target)
        resid = float(np.max(np.abs(R @ sigma + lam)))
        put("sigma_residual", resid <= 1e-10, f"residual={resid:.3e}")
        others = np.delete(sigma, target)
        put("sigma_maximum", bool(np.all(sigma[target] > others)), f"sigma[target]={sigma[target]:.6g}")
    else:
        put("sigma_residual", False, "graph disconnected")
        put("sigma_maximum", False, "graph disconnected")
    return checks


# Worker processes rebuild the model once per chunk from the picklable config.
def _run_chunk(cfg: SimulationConfig, ids: list[int]) -> list[TrajectoryRecord]:
    model = build_model(cfg)
    crit = ConvergenceCriterion(cfg.threshold, cfg.patience)
    out = []
    for tid in ids:
        seed = stream_seed(cfg.seed, tid)
        try:
            if cfg.mode == "closed":
                rec = run_closed_trajectory(model.rho0, model.context, cfg.steps, seed, crit, cfg.snapshot_every, cfg.diagnostics)
            else:
                rec = run_open_trajectory(model.rho0, model.kraus, cfg.steps, crit, seed, cfg.stop_on_convergence, cfg.snapshot_every)
        except QNDError as exc:
            rec = TrajectoryRecord(seed, np.zeros(0, int), np.zeros(0), populations(model.rho0)[None], error=f"{type(exc).__name__}: {exc}")
        rec.snapshots = {}
        rec.final_state = None
        out.append(rec)
    return out


def simulate_records(cfg: SimulationConfig, workers: int | None = None) -> list[TrajectoryRecord]:
    """Run every trajectory; the returned list is ordered by trajectory id."""
    workers = cfg.workers if workers is None else workers
    ids = list(range(cfg.trajectories))
    if workers <= 1:
        return _run_chunk(cfg, ids)
    chunks = [ids[i::workers] for i in range(workers)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_run_chunk, [cfg] * len(chunks), chunks))
    by_id = {}
    for chunk, recs in zip(chunks, parts):
        by_id.update(zip(chunk, recs))
    return [by_id[i] for i in ids]


def _fmt(x) -> str:
    return repr(float(x))


def trajectories_csv(records, dim: int, diagnostics: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["trajectory_id", "step", "outcome", "u"] + [f"pop_{n}" for n in range(dim)]
    if diagnostics:
        header += ["Q1", "Q2", "W_eps"]
    w.writerow(header)
    for tid, rec in enumerate(records):
        for k, pops in enumerate(rec.populations):
            row = [tid, k, "" if k == 0 else int(rec.outcomes[k - 1]), "" if k == 0 else _fmt(rec.controls[k - 1])]
            row += [_fmt(p) for p in pops]
            if diagnostics and rec.diagnostics is not None:
                row += [_fmt(x) for x in rec.diagnostics[k]]
            w.writerow(row)
    return buf.getvalue()


def _padded_fidelity(series, steps: int) -> np.ndarray:
    """(N, steps + 1) matrix of target populations; short series hold their last value."""
    F = np.empty((len(series), steps + 1))
    for i, f in enumerate(series):
        F[i, : len(f)] = f
        F[i, len(f):] = f[-1]
    return F


def fidelity_curve(series, steps: int) -> np.ndarray:
    """Rows ``(step, mean, p5, p95)`` from per-trajectory target populations."""
    F = _padded_fidelity(series, steps)
    k = np.arange(steps + 1)
    return np.column_stack([k, F.mean(axis=0), np.percentile(F, 5, axis=0), np.percentile(F, 95, axis=0)])


def _write_table(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


@dataclass
class EnsembleSummary:
    target: int
    dim: int
    mean_fidelity: np.ndarray
    final_fidelity: np.ndarray
    p_hat: np.ndarray
    standard_errors: np.ndarray
    expected_probabilities: np.ndarray
    unconverged_seeds: list
    failures: list
    convergence_steps: list
    wall_clock_seconds: float
    provenance: dict
    sigma: np.ndarray | None = None
    gaps: np.ndarray | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def arr(x):
            return None if x is None else [float(v) for v in x]

        return {
            "version": __version__,
            "config": self.config,
            "target": self.target,
            "dim": self.dim,
            "n_trajectories": len(self.final_fidelity),
            "mean_fidelity": arr(self.mean_fidelity),
            "final_fidelity": arr(self.final_fidelity),
            "mean_final_fidelity": float(np.mean(self.final_fidelity)),
            "convergence": {
                "p_hat": arr(self.p_hat),
                "standard_errors": arr(self.standard_errors),
                "expected": arr(self.expected_probabilities),
                "unconverged_seeds": self.unconverged_seeds,
                "convergence_steps": self.convergence_steps,
            },
            "failures": self.failures,
            "sigma": arr(self.sigma),
            "lambda": arr(self.gaps),
            "wall_clock_seconds": self.wall_clock_seconds,
            "provenance": self.provenance,
        }


def summarize(records, cfg: SimulationConfig, model: Model, elapsed: float = 0.0) -> EnsembleSummary:
    if not records:
        raise ValueError("empty ensemble")
    d, target = model.dim, model.target
    F = _padded_fidelity([r.populations[:, target] for r in records], cfg.steps)
    N = len(records)
    counts = np.bincount([r.converged_to for r in records if r.converged_to is not None], minlength=d).astype(float)
    p_hat = counts / N
    weights = model.context.weights if model.context is not None else None
    return EnsembleSummary(
        target=target,
        dim=d,
        mean_fidelity=F.mean(axis=0),
        final_fidelity=F[:, -1],
        p_hat=p_hat,
        standard_errors=np.sqrt(p_hat * (1 - p_hat) / N),
        expected_probabilities=populations(model.rho0),
        unconverged_seeds=[r.seed for r in records if r.converged_to is None],
        failures=[{"trajectory_id": i, "seed": r.seed, "error": r.error} for i, r in enumerate(records) if r.error],
        convergence_steps=[r.converged_at for r in records],
        wall_clock_seconds=elapsed,
        provenance={
            "base_seed": cfg.seed,
            "stream_seed": "base_seed XOR splitmix64(trajectory_id)",
            "bit_generator": "numpy PCG64 via default_rng",
            "numpy": np.__version__,
        },
        sigma=None if weights is None else weights.sigma,
        gaps=None if weights is None else weights.gaps,
        config=cfg.to_dict(),
    )


def run_ensemble(cfg: SimulationConfig, workers: int | None = None) -> EnsembleSummary:
    """Run the configured ensemble and persist all artifacts to ``cfg.output_dir``."""
    model = build_model(cfg)
    t0 = time.perf_counter()
    records = simulate_records(cfg, workers)
    elapsed = time.perf_counter() - t0
    summary = summarize(records, cfg, model, elapsed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / TRAJECTORIES_CSV).write_text(trajectories_csv(records, model.dim, cfg.diagnostics and cfg.mode == "closed"))
    write_plot_data(summary, out, records)
    (out / SUMMARY_JSON).write_text(json.dumps(summary.to_json(), indent=2))
    return summary


def write_plot_data(summary: EnsembleSummary | dict, out: Path, records=None):
    """Write ``fidelity_curve.csv`` and, when weights exist, ``sigma.csv``."""
    doc = summary.to_json() if isinstance(summary, EnsembleSummary) else summary
    out = Path(out)
    steps = len(doc["mean_fidelity"]) - 1
    if records is not None:
        series = [r.populations[:, doc["target"]] for r in records]
    else:
        series = _series_from_csv(out / TRAJECTORIES_CSV, doc["target"])
    rows = fidelity_curve(series, steps)
    _write_table(out / FIDELITY_CSV, ["step", "mean", "p5", "p95"], [[int(r[0])] + [_fmt(x) for x in r[1:]] for r in rows])
    if doc.get("sigma") is not None:
        _write_table(out / SIGMA_CSV, ["n", "sigma", "lambda"], [[n, _fmt(s), _fmt(l)] for n, (s, l) in enumerate(zip(doc["sigma"], doc["lambda"]))])


def _series_from_csv(path: Path, target: int) -> list:
    series = {}
    with path.open() as fh:
        for row in csv.DictReader(fh):
            series.setdefault(int(row["trajectory_id"]), []).append(float(row[f"pop_{target}"]))
    if not series:
        raise ValueError("empty ensemble")
    return [np.array(series[k]) for k in sorted(series)]


def report(out_dir) -> str:
    """Human-readable summary of a finished run; regenerates the plot-data files."""
    out = Path(out_dir)
    path = out / SUMMARY_JSON
    if not path.is_file():
        raise FileNotFoundError(f"no {SUMMARY_JSON} in {out}")
    doc = json.loads(path.read_text())
    if not doc.get("n_trajectories"):
        raise ValueError("empty ensemble")
    write_plot_data(doc, out)
    mf = doc["mean_fidelity"]
    conv = doc["convergence"]
    lines = [
        f"trajectories      {doc['n_trajectories']}",
        f"steps             {len(mf) - 1}",
        f"target            {doc['target']}",
        f"mean fidelity     step 0: {mf[0]:.4f}   final: {mf[-1]:.4f}",
        f"final >= 0.8      {np.mean(np.array(doc['final_fidelity']) >= 0.8):.3f}",
        f"unconverged       {len(conv['unconverged_seeds'])}",
        f"failures          {len(doc['failures'])}",
        "",
        f"{'n':>3} {'p_hat':>8} {'se':>8} {'<n|rho0|n>':>11}" + (f" {'sigma':>10}" if doc.get("sigma") else ""),
    ]
    for n in range(doc["dim"]):
        line = f"{n:>3} {conv['p_hat'][n]:>8.4f} {conv['standard_errors'][n]:>8.4f} {conv['expected'][n]:>11.4f}"
        if doc.get("sigma"):
            line += f" {doc['sigma'][n]:>10.5f}"
        lines.append(line)
    return "\n".join(lines)
