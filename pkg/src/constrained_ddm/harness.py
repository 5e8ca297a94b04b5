"""Experiment runner: configuration, metrics, reports, ablation and scaling timers."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli_w

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from . import ddm, problems
from .network import MLP, ConfigurationError, MLPConfig, load_checkpoint, save_checkpoint

# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def relative_l2(pred, exact) -> float:
    pred, exact = np.asarray(pred, dtype=np.float64), np.asarray(exact, dtype=np.float64)
    denom = np.linalg.norm(exact.ravel())
    if denom == 0.0:
        raise ValueError("relative error undefined for an all-zero reference")
    return float(np.linalg.norm((pred - exact).ravel()) / denom)


def linf(pred, exact) -> float:
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(exact, dtype=np.float64)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    problem: str = "poisson-low"
    problem_params: dict = field(default_factory=dict)
    layout: str = "cartesian"  # cartesian | frame | butterfly
    rows: int = 2
    cols: int = 2
    points: list = field(default_factory=lambda: [6400, 80])
    hidden_layers: int = 3
    units: int = 20
    optimizer: str = "lbfgs"
    lbfgs_lr: float = 1.0
    lbfgs_max_iter: int = 20
    lbfgs_max_evals: int = 25
    lr_model: float = 1e-3
    lr_interface: float = 1e-3
    loss: str = "approx"
    project_q: bool = True
    eta: dict = field(default_factory=dict)
    outer: int = 500
    inner_cap: int = 100
    epoch_min: int = 50
    seed: int = 0
    backend: str = "sequential"
    output_dir: str = ""
    eval_every: int = 1
    eval_grid: int = 0  # 0 keeps the problem default

    @classmethod
    def for_problem(cls, name: str, **overrides) -> "RunConfig":
        """Config seeded from a catalog problem's defaults, then ``overrides``."""
        params = overrides.pop("problem_params", {})
        pr = problems.get_problem(name, **params)
        d = pr.defaults
        base = dict(problem=name, problem_params=params)
        layout = d.get("layout", "butterfly" if pr.geometry_kind == "butterfly" else "cartesian")
        base["layout"] = layout
        if "decomposition" in d:
            base["rows"], base["cols"] = d["decomposition"]
        base["points"] = list(d.get("points", (6400, 80)))
        for src, dst in [
            ("hidden_layers", "hidden_layers"),
            ("units", "units"),
            ("outer", "outer"),
            ("inner_cap", "inner_cap"),
            ("epoch_min", "epoch_min"),
            ("optimizer", "optimizer"),
            ("lbfgs_lr", "lbfgs_lr"),
            ("lr_model", "lr_model"),
            ("lr_interface", "lr_interface"),
            ("eta", "eta"),
        ]:
            if src in d:
                base[dst] = d[src]
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.outer < 0 or self.inner_cap < 1 or not (1 <= self.epoch_min <= self.inner_cap):
            raise ConfigurationError("need outer >= 0 and 1 <= epoch_min <= inner_cap")
        if self.loss not in ("approx", "full", "abs"):
            raise ConfigurationError(f"unknown interface loss {self.loss!r}")
        if self.layout not in ("cartesian", "frame", "butterfly"):
            raise ConfigurationError(f"unknown layout {self.layout!r}")
        if self.backend not in ddm.BACKENDS:
            raise ConfigurationError(f"unknown backend {self.backend!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["points"] = [int(v) for v in self.points]
        return d

    def save(self, path) -> None:
        Path(path).write_text(tomli_w.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = tomllib.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    # -- builders -------------------------------------------------------
    def build_problem(self):
        pr = problems.get_problem(self.problem, **self.problem_params)
        if self.eval_grid:
            pr.defaults["eval_grid"] = self.eval_grid
        return pr

    def build_decomposition(self, pr):
        if self.layout == "cartesian":
            return ddm.partition(pr.box, self.rows, self.cols, self.points)
        if self.layout == "frame":
            inner = getattr(pr, "inner", None)
            if inner is None:
                raise ConfigurationError("frame layout needs a problem with an inner square")
            n_int, n_bnd, n_ifc = (list(self.points) + [400, 80, 80])[:3]
            share = inner.area / pr.box.area
            n_in = int(round(n_int * share))
            return ddm.frame_layout(pr.box, inner, (n_in, n_int - n_in), int(round(n_bnd / 4)), int(round(n_ifc / 4)))
        counts = (list(self.points) + [1024, 64, 16, 16])[:4]
        return ddm.butterfly_layout(*counts)

    def build_network(self, pr) -> MLPConfig:
        return MLPConfig(
            hidden_layers=self.hidden_layers,
            units_per_layer=self.units,
            output_dim=pr.n_outputs,
            extras=pr.extras,
            positive_extras=pr.positive_extras,
        )

    def build_settings(self) -> ddm.TrainSettings:
        return ddm.TrainSettings(
            loss=self.loss,
            optimizer=self.optimizer,
            lbfgs_lr=self.lbfgs_lr,
            lbfgs_max_iter=self.lbfgs_max_iter,
            lbfgs_max_evals=self.lbfgs_max_evals,
            lr_model=self.lr_model,
            lr_interface=self.lr_interface,
            inner_cap=self.inner_cap,
            epoch_min=self.epoch_min,
            eta=dict(self.eta),
            project_q=self.project_q,
        )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


class Evaluator:
    """Fixed evaluation grid with its reference values and subdomain ownership."""

    def __init__(self, problem, decomposition):
        self.problem = problem
        self.points = problem.evaluation_points()
        self.reference = problem.reference(self.points)
        self.owner = decomposition.owner(self.points)
        self.n_sub = len(decomposition)
        if np.any(self.owner < 0):
            raise ConfigurationError("evaluation points outside every subdomain")

    def split(self) -> list:
        return [self.points[self.owner == i] for i in range(self.n_sub)]

    def assemble(self, parts: list) -> np.ndarray:
        out = np.zeros((len(self.points), parts[0].shape[1] if parts else 1))
        for i, part in enumerate(parts):
            out[self.owner == i] = part
        return out

    def errors(self, pred: np.ndarray) -> dict:
        names = self.problem.field_names
        glob, per_sub = {}, {}
        for j, name in enumerate(names):
            glob[name] = {
                "relative_l2": relative_l2(pred[:, j], self.reference[:, j]),
                "linf": linf(pred[:, j], self.reference[:, j]),
            }
        for i in range(self.n_sub):
            m = self.owner == i
            entry = {}
            for j, name in enumerate(names):
                ref = self.reference[m, j]
                rel = relative_l2(pred[m, j], ref) if np.any(ref != 0) else math.nan
                entry[name] = {"relative_l2": rel, "linf": linf(pred[m, j], ref)}
            per_sub[i] = entry
        return {"global": glob, "subdomains": per_sub}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    errors: dict
    subdomain_errors: dict
    final_state: dict
    trace: list
    traffic: list
    timing: dict = field(default_factory=dict)

    def global_error(self, field_name: str | None = None, kind: str = "relative_l2") -> float:
        if field_name is None:
            field_name = next(iter(self.errors))
        return self.errors[field_name][kind]

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "config": self.config,
            "errors": self.errors,
            "subdomain_errors": self.subdomain_errors,
            "final_state": self.final_state,
            "traffic": self.traffic,
            "n_trace_rows": len(self.trace),
        }
        if include_timing:
            d["timing"] = self.timing
        return d

    def write(self, out_dir, field_points=None, field_values=None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(_jsonable(self.to_dict()), indent=2))
        if self.trace:
            keys = []
            for row in self.trace:
                for k in row:
                    if k not in keys:
                        keys.append(k)
            with open(out / "trace.csv", "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=keys)
                writer.writeheader()
                for row in self.trace:
                    writer.writerow({k: _csv_value(row.get(k, "")) for k in keys})
        if field_points is not None:
            with open(out / "field.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                cols = ["x", "y"] + [f"pred_{n}" for n in range(field_values.shape[1])]
                writer.writerow(cols)
                for p, v in zip(field_points, field_values):
                    writer.writerow([repr(float(p[0])), repr(float(p[1]))] + [repr(float(a)) for a in v])


def _csv_value(v):
    if isinstance(v, (list, tuple)):
        return ";".join(repr(float(a)) for a in v)
    if isinstance(v, float):
        return repr(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def run(config: RunConfig, progress=None) -> RunReport:
    """Build, train and evaluate one configuration; writes artifacts if ``output_dir`` is set."""
    config.validate()
    pr = config.build_problem()
    dec = config.build_decomposition(pr)
    net = config.build_network(pr)
    settings = config.build_settings()
    evaluator = Evaluator(pr, dec)
    eval_parts = evaluator.split()
    trace = []

    def record(n, diags, runner):
        do_eval = config.eval_every > 0 and (n % config.eval_every == 0 or n == config.outer - 1)
        errs = None
        if do_eval:
            pred = evaluator.assemble(runner.predict(eval_parts))
            errs = evaluator.errors(pred)
        for i, d in enumerate(diags):
            row = {k: v for k, v in d.items()}
            if errs is not None:
                for name in pr.field_names:
                    row[f"rel_l2_{name}"] = errs["subdomains"][i][name]["relative_l2"]
                    row[f"global_rel_l2_{name}"] = errs["global"][name]["relative_l2"]
            trace.append(row)
        if progress is not None:
            progress(n, diags, errs)

    t0 = time.perf_counter()
    result = ddm.train(dec, pr, net, settings, config.outer, seed=config.seed, backend=config.backend, callback=record)
    wall = time.perf_counter() - t0
    workers = result.workers
    parts = [w.predict(x) if len(x) else np.zeros((0, net.output_dim)) for w, x in zip(workers, eval_parts)]
    pred = evaluator.assemble(parts)
    errs = evaluator.errors(pred)
    final = {}
    for w in workers:
        label = f"{w.sub.label[0]},{w.sub.label[1]}"
        entry = {"q": w.q.tolist(), "alm": w.alm.as_dict(), "epochs": w.epochs_run, "evaluations": w.evaluations}
        entry.update(w.model.extra_values(w.theta))
        final[label] = entry
    report = RunReport(
        config=config.to_dict(),
        errors=errs["global"],
        subdomain_errors={f"{dec.subdomains[i].label[0]},{dec.subdomains[i].label[1]}": v for i, v in errs["subdomains"].items()},
        final_state=final,
        trace=trace,
        traffic=[list(t) for t in result.traffic],
        timing={"compute": result.compute_time, "communication": result.communication_time, "wall": wall},
    )
    if config.output_dir:
        report.write(config.output_dir, evaluator.points, pred)
        ck = Path(config.output_dir) / "checkpoints"
        ck.mkdir(parents=True, exist_ok=True)
        for w in workers:
            save_checkpoint(ck / f"subdomain_{w.sub.label[0]}_{w.sub.label[1]}.json", net, w.theta, label=list(w.sub.label), q=w.q.tolist())
        config.save(Path(config.output_dir) / "config.toml")
    return report


def evaluate_checkpoint(directory) -> dict:
    """Re-evaluate a run directory written by :func:`run` from its checkpoints."""
    directory = Path(directory)
    config = RunConfig.load(directory / "config.toml")
    pr = config.build_problem()
    dec = config.build_decomposition(pr)
    evaluator = Evaluator(pr, dec)
    parts = []
    for sub, x in zip(dec.subdomains, evaluator.split()):
        net, theta, _ = load_checkpoint(directory / "checkpoints" / f"subdomain_{sub.label[0]}_{sub.label[1]}.json")
        parts.append(MLP(net).forward(theta, x) if len(x) else np.zeros((0, net.output_dim)))
    return evaluator.errors(evaluator.assemble(parts))


# ---------------------------------------------------------------------------
# ablation and scaling
# ---------------------------------------------------------------------------

# published reference values, (mean, std) of the relative l2 error
REFERENCE_ABLATION = {
    "approx": (5.91e-3, 2.49e-3),
    "full": (2.23e3, 1.45e3),
    "abs": (4.81e-2, 5.83e-3),
}


def ablation_interface_loss(config: RunConfig, trials: int = 5, kinds=("approx", "full", "abs"), project_full: bool = False):
    """Mean and standard deviation of the global relative l2 error per loss variant.

    The full (cross-term) loss is a plain Robin mismatch whose weights are not
    bounded below unless ``project_full`` is set.
    """
    table = {}
    for kind in kinds:
        errs = []
        for t in range(trials):
            cfg = RunConfig(**{**config.to_dict(), "loss": kind, "seed": config.seed + t, "output_dir": ""})
            if kind == "full":
                cfg.project_q = project_full
            rep = run(cfg)
            errs.append(rep.global_error())
        table[kind] = {"mean": float(np.mean(errs)), "std": float(np.std(errs)), "trials": errs}
    return table


def scaling_timers(config: RunConfig, mode: str = "weak", max_ranks: int = 8, outer: int = 5):
    """Time ``outer`` fixed outer iterations for 2..max_ranks subdomains.

    Weak scaling keeps the per-subdomain point budget of the 2-subdomain run;
    strong scaling splits the 2-subdomain global budget. Subdomains are laid
    out as 1 x N strips along x.
    """
    if mode not in ("weak", "strong"):
        raise ConfigurationError("mode must be weak or strong")
    ranks = [n for n in (2, 4, 8, 16, 32) if n <= max_ranks]
    base_int, base_edge = config.points[0], config.points[1]
    rows = []
    for n in ranks:
        if mode == "weak":
            pts = [base_int * n // 2, base_edge]
        else:
            pts = [base_int, base_edge]
        cfg = RunConfig(
            **{
                **config.to_dict(),
                "rows": 1,
                "cols": n,
                "points": pts,
                "outer": outer,
                "inner_cap": config.inner_cap,
                "epoch_min": min(config.epoch_min, config.inner_cap),
                "output_dir": "",
                "eval_every": 0,
            }
        )
        rep = run(cfg)
        rows.append({"ranks": n, "compute": rep.timing["compute"], "communication": rep.timing["communication"], "total": rep.timing["compute"] + rep.timing["communication"]})
    t2 = rows[0]["total"]
    for r in rows:
        if mode == "weak":
            r["efficiency"] = t2 / r["total"]
        else:
            r["speedup"] = t2 / r["total"]
            r["efficiency"] = r["speedup"] / (r["ranks"] / 2)
    return rows


def weak_efficiency(t2: float, tn: float) -> float:
    return t2 / tn


def strong_speedup(t2: float, tn: float) -> float:
    return t2 / tn


def strong_efficiency(t2: float, tn: float, n: int) -> float:
    return strong_speedup(t2, tn) / (n / 2)
