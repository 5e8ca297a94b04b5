"""Non-overlapping domain decomposition: layouts, collocation, workers and exchange."""

from __future__ import annotations

import math
import struct
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import alm, geometry, operators
from .autodiff import evaluate, tape
from .autodiff.jets import DerivativeBundle
from .autodiff.tape import Node
from .geometry import Box, BoxRegion, ButterflyArc, ButterflyRegion, FrameRegion, Segment
from .network import MLP, ConfigurationError, MLPConfig, xavier_init
from .optim import LBFGS, Adam, project_interface_params

EDGE_NAMES = ("west", "east", "south", "north")
_OPPOSITE = {0: 1, 1: 0, 2: 3, 3: 2}


class WorkerFailure(RuntimeError):
    def __init__(self, label, cause):
        super().__init__(f"subdomain {label} failed: {type(cause).__name__}: {cause}")
        self.label = label
        self.cause = cause


def _direction(normal) -> int:
    nx, ny = normal
    if abs(nx) >= abs(ny):
        return 1 if nx > 0 else 0
    return 3 if ny > 0 else 2


@dataclass
class InterfaceLink:
    """One shared piece of interface as seen from its owner."""

    neighbor: int
    edge: int  # direction of the owner's outward normal
    segment: Segment
    count: int
    key: tuple  # canonical identity shared by both sides


@dataclass
class Subdomain:
    index: int
    label: tuple[int, int]
    region: object
    boundary: list = field(default_factory=list)  # (piece, count)
    interfaces: list = field(default_factory=list)
    n_interior: int = 0
    n_measurements: int = 0

    @property
    def has_boundary(self) -> bool:
        return sum(c for _, c in self.boundary) > 0


@dataclass
class Decomposition:
    box: Box
    shape: tuple[int, int]
    subdomains: list
    layout: str = "cartesian"

    def __len__(self) -> int:
        return len(self.subdomains)

    def by_label(self, label) -> Subdomain:
        for s in self.subdomains:
            if s.label == tuple(label):
                return s
        raise KeyError(label)

    def owner(self, x) -> np.ndarray:
        """Index of the first subdomain containing each point (-1 if none)."""
        x = np.atleast_2d(x)
        out = np.full(len(x), -1)
        for s in self.subdomains:
            hit = (out < 0) & s.region.contains(x)
            out[hit] = s.index
        return out


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------


def partition(box: Box, rows: int, cols: int, total_points) -> Decomposition:
    """Cartesian R x C split; row 0 is the top strip.

    ``total_points`` is (N_interior, N_edge): global interior count and points
    along one full side of the box. Horizontal edges of a subdomain receive
    round(N_edge / C) points, vertical edges round(N_edge / R).
    """
    if rows < 1 or cols < 1:
        raise ConfigurationError("decomposition needs at least one row and column")
    n_int, n_edge = total_points[0], total_points[1]
    per_int = int(round(n_int / (rows * cols)))
    n_h, n_v = int(round(n_edge / cols)), int(round(n_edge / rows))
    w, h = box.width / cols, box.height / rows
    subs = []
    for r in range(rows):
        for c in range(cols):
            sub_box = Box(box.x0 + c * w, box.x0 + (c + 1) * w, box.y1 - (r + 1) * h, box.y1 - r * h)
            s = Subdomain(index=r * cols + c, label=(r, c), region=BoxRegion(sub_box), n_interior=per_int)
            edges = sub_box.edges()
            nbrs = {0: (r, c - 1), 1: (r, c + 1), 2: (r + 1, c), 3: (r - 1, c)}
            for d in range(4):
                count = n_h if d in (2, 3) else n_v
                nr, nc = nbrs[d]
                if 0 <= nr < rows and 0 <= nc < cols:
                    j = nr * cols + nc
                    lo = min(s.index, j)
                    lo_dir = d if s.index == lo else _OPPOSITE[d]
                    s.interfaces.append(InterfaceLink(j, d, edges[d], count, ("cart", lo, max(s.index, j), lo_dir)))
                else:
                    s.boundary.append((edges[d], count))
            subs.append(s)
    return Decomposition(box, (rows, cols), subs)


def frame_layout(outer: Box, inner: Box, interior=(100, 300), boundary_per_side=20, interface_per_side=20):
    """Two subdomains: an inner square (0,0) and the surrounding frame (0,1)."""
    sq = Subdomain(index=0, label=(0, 0), region=BoxRegion(inner), n_interior=int(interior[0]))
    fr = Subdomain(index=1, label=(0, 1), region=FrameRegion(outer, inner), n_interior=int(interior[1]))
    for d, seg in inner.edges().items():
        key = ("frame", 0, 1, d)
        sq.interfaces.append(InterfaceLink(1, d, seg, interface_per_side, key))
        fr.interfaces.append(InterfaceLink(0, _OPPOSITE[d], seg.reversed(), interface_per_side, key))
    for seg in outer.edges().values():
        fr.boundary.append((seg, boundary_per_side))
    return Decomposition(outer, (1, 2), [sq, fr], layout="frame")


def butterfly_layout(interior=1024, interface=64, measurements=16, boundary=16):
    """Quadrant split of the butterfly at x = 0 and y = 0 (row 0 on top)."""
    ax, ay = 2 * geometry.BUTTERFLY_AX, 2 * geometry.BUTTERFLY_AY
    quads = {
        (0, 0): (Box(-ax, 0.0, 0.0, ay), (0.5 * math.pi, math.pi)),
        (0, 1): (Box(0.0, ax, 0.0, ay), (0.0, 0.5 * math.pi)),
        (1, 0): (Box(-ax, 0.0, -ay, 0.0), (math.pi, 1.5 * math.pi)),
        (1, 1): (Box(0.0, ax, -ay, 0.0), (1.5 * math.pi, 2 * math.pi)),
    }
    x_end, y_end = geometry.BUTTERFLY_AX, geometry.BUTTERFLY_AY
    # shared half-axes, canonical orientation from the origin outwards
    cuts = {
        "up": Segment((0.0, 0.0), (0.0, y_end), (1.0, 0.0)),
        "down": Segment((0.0, 0.0), (0.0, -y_end), (1.0, 0.0)),
        "left": Segment((0.0, 0.0), (-x_end, 0.0), (0.0, 1.0)),
        "right": Segment((0.0, 0.0), (x_end, 0.0), (0.0, 1.0)),
    }
    subs = {}
    for (r, c), (clip, (t0, t1)) in quads.items():
        s = Subdomain(index=2 * r + c, label=(r, c), region=ButterflyRegion(clip), n_interior=int(interior))
        s.boundary.append((ButterflyArc(t0, t1), int(boundary)))
        s.n_measurements = int(measurements)
        subs[(r, c)] = s
    pairs = [
        ((0, 0), (0, 1), "up"),
        ((1, 0), (1, 1), "down"),
        ((0, 0), (1, 0), "left"),
        ((0, 1), (1, 1), "right"),
    ]
    for a, b, name in pairs:
        sa, sb = subs[a], subs[b]
        seg = cuts[name]
        # orient the normal outwards for subdomain a
        if name in ("up", "down"):
            seg_a = Segment(seg.p0, seg.p1, (1.0, 0.0))
        else:
            seg_a = Segment(seg.p0, seg.p1, (0.0, -1.0))
        seg_b = seg_a.reversed()
        key = ("butterfly", sa.index, sb.index, name)
        sa.interfaces.append(InterfaceLink(sb.index, _direction(seg_a.normal), seg_a, int(interface), key))
        sb.interfaces.append(InterfaceLink(sa.index, _direction(seg_b.normal), seg_b, int(interface), key))
    ordered = [subs[k] for k in sorted(subs)]
    box = Box(-geometry.BUTTERFLY_AX * 2, geometry.BUTTERFLY_AX * 2, -geometry.BUTTERFLY_AY * 2, geometry.BUTTERFLY_AY * 2)
    return Decomposition(box, (2, 2), ordered, layout="butterfly")


# ---------------------------------------------------------------------------
# collocation
# ---------------------------------------------------------------------------


@dataclass
class PointSets:
    interior: np.ndarray
    boundary: np.ndarray
    boundary_normals: np.ndarray
    interfaces: list  # per link: (points, normals)
    measurements: np.ndarray

    def counts(self) -> dict:
        return {
            "interior": len(self.interior),
            "boundary": len(self.boundary),
            "interface": [len(p) for p, _ in self.interfaces],
            "measurements": len(self.measurements),
        }


def _key_entropy(key) -> list[int]:
    out = []
    for item in key:
        if isinstance(item, str):
            out.extend(item.encode())
        else:
            out.append(int(item))
    return out


def sample_collocation(sub: Subdomain, seed: int, problem=None) -> PointSets:
    """Random collocation points for ``sub``; shared edges use a canonical stream."""
    r, c = sub.label
    rng_int = np.random.default_rng([seed, r, c, 1])
    rng_bnd = np.random.default_rng([seed, r, c, 2])
    rng_mea = np.random.default_rng([seed, r, c, 3])
    interior = sub.region.sample(sub.n_interior, rng_int) if sub.n_interior else np.zeros((0, 2))
    pts, nrm = [], []
    for piece, count in sub.boundary:
        p, n = piece.sample(count, rng_bnd)
        pts.append(p)
        nrm.append(n)
    boundary = np.vstack(pts) if pts else np.zeros((0, 2))
    normals = np.vstack(nrm) if nrm else np.zeros((0, 2))
    links = []
    for link in sub.interfaces:
        rng = np.random.default_rng([seed, 104729] + _key_entropy(link.key))
        p, n = link.segment.sample(link.count, rng)
        links.append((p, n))
    meas = None
    if problem is not None and problem.has_measurements:
        meas = problem.measurement_points(sub.region, sub.n_measurements, rng_mea)
    if meas is None:
        meas = np.zeros((0, 2))
    return PointSets(interior, boundary, normals, links, np.asarray(meas, dtype=np.float64))


# ---------------------------------------------------------------------------
# messages
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<iiBI")


@dataclass
class InterfaceMessage:
    sender: tuple[int, int]
    edge: int  # receiver-side edge direction
    fields: list  # arrays (count, c): Dirichlet values..., flux, tangential

    @property
    def count(self) -> int:
        return len(self.fields[0])

    def encode(self) -> bytes:
        header = _HEADER.pack(int(self.sender[0]), int(self.sender[1]), int(self.edge), self.count)
        payload = np.concatenate([np.asarray(f, dtype="<f8").ravel() for f in self.fields])
        return header + payload.astype("<f8").tobytes()

    @classmethod
    def decode(cls, raw: bytes, n_fields: int | None = None, components: int | None = None) -> "InterfaceMessage":
        row, col, edge, count = _HEADER.unpack_from(raw)
        data = np.frombuffer(raw[_HEADER.size :], dtype="<f8")
        width = data.size // count if count else 0
        if components is None:
            components = 2 if width == 6 else 1
        if n_fields is None:
            n_fields = width // components
        if n_fields * components * count != data.size:
            raise ValueError("message payload does not match its header")
        blocks = data.reshape(n_fields, count, components)
        return cls((row, col), edge, [b.copy() for b in blocks])

    def signature(self) -> tuple:
        digest = hash(tuple(np.asarray(f, dtype=np.float64).tobytes() for f in self.fields))
        return (self.sender, self.edge, self.count, digest)


# ---------------------------------------------------------------------------
# worker
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    loss: str = "approx"
    optimizer: str = "lbfgs"
    lbfgs_lr: float = 0.1
    lbfgs_max_iter: int = 20
    lbfgs_max_evals: int = 25
    lbfgs_history: int = 10
    lr_model: float = 1e-3
    lr_interface: float = 1e-3
    inner_cap: int = 100
    epoch_min: int = 50
    eta: dict = field(default_factory=dict)
    project_q: bool = True


@dataclass
class EpochEval:
    x: np.ndarray
    loss: float
    objective: float
    constraints: np.ndarray
    grad_q: np.ndarray


class SubdomainWorker:
    """Owns one subdomain's model, interface weights, multipliers and targets."""

    def __init__(self, sub: Subdomain, points: PointSets, problem, net: MLPConfig, settings: TrainSettings, seed: int):
        self.sub = sub
        self.points = points
        self.problem = problem
        self.settings = settings
        self.model = MLP(net)
        self.theta = xavier_init(net, seed).values
        self.n_q = len(problem.interface_names)
        self.q = np.ones(self.n_q)
        c = problem.components
        n_dir = self.n_q - 2
        # interface targets start at zero
        self.targets = [
            [np.zeros((len(p), c)) for _ in range(self.n_q)] for p, _ in points.interfaces
        ]
        self._n_dirichlet = n_dir
        self.coupled = bool(sub.interfaces)
        names = []
        if len(points.boundary):
            names.append("B")
        if self.coupled:
            names.append("P")
        if len(points.measurements):
            names.append("M")
        self.alm = alm.ALMState.initial(names, eta=settings.eta)
        self.lbfgs = LBFGS(
            lr=settings.lbfgs_lr,
            history_size=settings.lbfgs_history,
            max_iter=settings.lbfgs_max_iter,
            max_evals=settings.lbfgs_max_evals,
        )
        self.adam_theta = Adam(lr=settings.lr_model)
        self.adam_q = Adam(lr=settings.lr_interface, maximize=True, lower_bound=1.0 if settings.project_q else None)
        aux = [points.boundary] + [p for p, _ in points.interfaces] + [points.measurements]
        self._aux_points = np.vstack(aux)
        sizes = [len(a) for a in aux]
        self._aux_slices = np.cumsum([0] + sizes)
        self._cache: list[EpochEval] = []
        self.last: EpochEval | None = None
        self.epochs_run = 0
        self.evaluations = 0

    # -- loss assembly --------------------------------------------------
    def _slice(self, bundle: DerivativeBundle, i: int) -> DerivativeBundle | None:
        a, b = int(self._aux_slices[i]), int(self._aux_slices[i + 1])
        if a == b:
            return None
        return DerivativeBundle(bundle.value[a:b], bundle.gradient[:, a:b], None)

    def graph(self, theta, q):
        """Build the augmented loss; returns (L, J, constraint nodes, leaves, q node)."""
        model, pr, pts = self.model, self.problem, self.points
        leaves = model.leaves(theta)
        extras = {name: model.extra(leaves, name) for name in model.config.extras}
        q_node = Node(np.asarray(q, dtype=np.float64), name="q")
        inner = evaluate(model, leaves, pts.interior, order=2)
        res_p = pr.pde_residual(inner, pts.interior, extras)
        aux = evaluate(model, leaves, self._aux_points, order=1)
        residuals = {}
        bb = self._slice(aux, 0)
        if bb is not None:
            residuals["B"] = pr.boundary_residual(bb, pts.boundary, pts.boundary_normals, extras)
        groups = []
        for k, (xp, nrm) in enumerate(pts.interfaces):
            ib = self._slice(aux, 1 + k)
            if ib is None:
                continue
            fields = pr.interface_fields(ib, xp, nrm, operators.rotate_normal(nrm), extras)
            groups.append([f - t for f, t in zip(fields, self.targets[k])])
        mb = self._slice(aux, len(self._aux_slices) - 2)
        if mb is not None:
            residuals["M"] = pr.data_residual(mb, pts.measurements, extras)
        if self.coupled:
            residuals["P"] = res_p
            objective = operators.interface_objective(self.settings.loss, q_node, groups)
        else:
            # a lone subdomain minimizes the physics residual under its boundary constraints
            objective = operators.mse(res_p)
        names, cons = operators.constraint_vector(residuals)
        if names != self.alm.names:
            raise ConfigurationError(f"constraint set {names} does not match multipliers {self.alm.names}")
        loss = alm.augmented_loss(objective, cons, self.alm)
        return loss, objective, cons, leaves, q_node

    def loss_and_grad(self, theta):
        loss, objective, cons, leaves, q_node = self.graph(theta, self.q)
        tape.check_finite(loss, "augmented loss")
        grads = tape.grad(loss, leaves + [q_node])
        g_theta = np.concatenate([g.ravel() for g in grads[:-1]])
        tape.check_finite(g_theta, "parameter gradient")
        self.evaluations += 1
        rec = EpochEval(
            np.array(theta, copy=True),
            float(loss.value),
            float(objective.value),
            np.array([float(c.value) for c in cons]),
            np.asarray(grads[-1], dtype=np.float64).copy(),
        )
        self._cache.append(rec)
        if len(self._cache) > 32:
            del self._cache[:-32]
        return rec.loss, g_theta

    def _lookup(self, theta) -> EpochEval:
        for rec in reversed(self._cache):
            if np.array_equal(rec.x, theta):
                return rec
        self.loss_and_grad(theta)
        return self._cache[-1]

    # -- training -------------------------------------------------------
    def epoch(self, p: int):
        self._cache.clear()
        if self.settings.optimizer == "lbfgs":
            theta, _, _ = self.lbfgs.step(self.theta, self.loss_and_grad)
        elif self.settings.optimizer == "adam":
            _, g = self.loss_and_grad(self.theta)
            theta = self.adam_theta.step(self.theta, g)
        else:
            raise ConfigurationError(f"unknown optimizer {self.settings.optimizer!r}")
        rec = self._lookup(theta)
        self.theta = theta
        if self.coupled:
            q_new = self.adam_q.step(self.q, rec.grad_q)
            self.q = project_interface_params(q_new) if self.settings.project_q else q_new
        self.last = rec
        self.epochs_run += 1
        return rec.loss, rec.constraints

    def inner_loop(self) -> int:
        self.lbfgs.reset()
        return alm.inner_loop(self.epoch, self.alm, self.settings.inner_cap, self.settings.epoch_min)

    # -- exchange -------------------------------------------------------
    def outgoing(self) -> list:
        """Messages for every neighbour, using the receiver's normal and tangent."""
        msgs = []
        if not self.sub.interfaces:
            return msgs
        leaves = self.model.leaves(self.theta)
        extras = {name: self.model.extra(leaves, name) for name in self.model.config.extras}
        for link, (xp, nrm) in zip(self.sub.interfaces, self.points.interfaces):
            if len(xp) == 0:
                continue
            recv_n = -nrm
            bundle = evaluate(self.model, leaves, xp, order=1)
            fields = self.problem.interface_fields(bundle, xp, recv_n, operators.rotate_normal(recv_n), extras)
            msgs.append(
                (link.neighbor, InterfaceMessage(self.sub.label, _receiver_edge(link), [np.asarray(f.value) for f in fields]))
            )
        return msgs

    def receive(self, msg: InterfaceMessage, sender_index: int) -> None:
        for k, link in enumerate(self.sub.interfaces):
            if link.neighbor == sender_index and link.edge == msg.edge:
                # replaced wholesale
                shapes = [t.shape for t in self.targets[k]]
                self.targets[k] = [np.array(f, dtype=np.float64).reshape(sh) for f, sh in zip(msg.fields, shapes)]
                return
        raise ConfigurationError(f"subdomain {self.sub.label} has no edge {msg.edge} facing {msg.sender}")

    def predict(self, x) -> np.ndarray:
        return self.model.forward(self.theta, x)

    def diagnostics(self) -> dict:
        rec = self.last
        d = {
            "objective": rec.objective if rec else math.nan,
            "loss": rec.loss if rec else math.nan,
            "q": self.q.tolist(),
            "ratios": (self.q[1:] / self.q[0]).tolist(),
            "epochs": self.epochs_run,
            "evaluations": self.evaluations,
        }
        for i, name in enumerate(self.alm.names):
            d[f"C_{name}"] = float(rec.constraints[i]) if rec else math.nan
            d[f"lambda_{name}"] = float(self.alm.lam[i])
            d[f"mu_{name}"] = float(self.alm.mu[i])
        d.update(self.model.extra_values(self.theta))
        return d


def _receiver_edge(link: InterfaceLink) -> int:
    # the receiver's outward normal is the reverse of the sender's
    return _direction((-link.segment.normal[0], -link.segment.normal[1]))


# ---------------------------------------------------------------------------
# backends and the outer loop
# ---------------------------------------------------------------------------


class SequentialBackend:
    """Runs every worker in the calling thread, in subdomain order."""

    name = "sequential"

    def __init__(self, workers):
        self.workers = list(workers)

    def _call(self, fn):
        out = []
        for w in self.workers:
            try:
                out.append(fn(w))
            except Exception as exc:  # noqa: BLE001 - reported with the subdomain label
                raise WorkerFailure(w.sub.label, exc) from exc
        return out

    def inner(self) -> list:
        return self._call(lambda w: (w.inner_loop(), w.diagnostics()))

    def outgoing(self) -> list:
        return self._call(lambda w: [(dst, m.encode()) for dst, m in w.outgoing()])

    def deliver(self, inbox: list) -> None:
        for w, msgs in zip(self.workers, inbox):
            for src, raw in msgs:
                w.receive(InterfaceMessage.decode(raw, n_fields=w.n_q, components=w.problem.components), src)

    def predict(self, x_per_worker: list) -> list:
        return [w.predict(x) if len(x) else np.zeros((0, w.model.config.output_dim)) for w, x in zip(self.workers, x_per_worker)]

    def fetch(self) -> list:
        return self.workers

    def close(self) -> None:
        pass


class ThreadBackend(SequentialBackend):
    """One thread per worker; results are gathered in subdomain order."""

    name = "threads"

    def __init__(self, workers):
        super().__init__(workers)
        self.pool = ThreadPoolExecutor(max_workers=max(1, len(self.workers)))

    def _call(self, fn):
        def guarded(w):
            try:
                return fn(w)
            except Exception as exc:  # noqa: BLE001
                raise WorkerFailure(w.sub.label, exc) from exc

        return list(self.pool.map(guarded, self.workers))

    def close(self) -> None:
        self.pool.shutdown(wait=True)


def _process_main(conn, worker) -> None:
    """Command loop of a worker living in a child process."""
    while True:
        cmd, arg = conn.recv()
        try:
            if cmd == "inner":
                conn.send(("ok", (worker.inner_loop(), worker.diagnostics())))
            elif cmd == "outgoing":
                conn.send(("ok", [(dst, m.encode()) for dst, m in worker.outgoing()]))
            elif cmd == "deliver":
                for src, raw in arg:
                    worker.receive(InterfaceMessage.decode(raw, n_fields=worker.n_q, components=worker.problem.components), src)
                conn.send(("ok", None))
            elif cmd == "predict":
                conn.send(("ok", worker.predict(arg) if len(arg) else np.zeros((0, worker.model.config.output_dim))))
            elif cmd == "fetch":
                conn.send(("ok", worker))
            elif cmd == "stop":
                conn.send(("ok", None))
                return
        except Exception as exc:  # noqa: BLE001
            conn.send(("error", f"{type(exc).__name__}: {exc}"))


class ProcessBackend:
    """One child process per worker; messages travel in their binary encoding."""

    name = "processes"

    def __init__(self, workers):
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        self.labels = [w.sub.label for w in workers]
        self.conns, self.procs = [], []
        for w in workers:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_process_main, args=(child, w), daemon=True)
            proc.start()
            self.conns.append(parent)
            self.procs.append(proc)

    def _broadcast(self, cmd, args=None) -> list:
        args = args if args is not None else [None] * len(self.conns)
        for conn, arg in zip(self.conns, args):
            conn.send((cmd, arg))
        out = []
        for label, conn in zip(self.labels, self.conns):
            status, payload = conn.recv()
            if status != "ok":
                raise WorkerFailure(label, RuntimeError(payload))
            out.append(payload)
        return out

    def inner(self) -> list:
        return self._broadcast("inner")

    def outgoing(self) -> list:
        return self._broadcast("outgoing")

    def deliver(self, inbox: list) -> None:
        self._broadcast("deliver", inbox)

    def predict(self, x_per_worker: list) -> list:
        return self._broadcast("predict", x_per_worker)

    def fetch(self) -> list:
        return self._broadcast("fetch")

    def close(self) -> None:
        try:
            self._broadcast("stop")
        except (EOFError, OSError, WorkerFailure):
            pass
        for p in self.procs:
            p.join(timeout=5)


BACKENDS = {"sequential": SequentialBackend, "threads": ThreadBackend, "processes": ProcessBackend}


def make_backend(name: str, workers):
    try:
        return BACKENDS[name](workers)
    except KeyError:
        raise ConfigurationError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None


def route(decomposition: Decomposition, outboxes: list) -> tuple[list, Counter, Counter]:
    """Sort encoded messages into per-receiver inboxes; returns (inbox, sent, received)."""
    inbox = [[] for _ in decomposition.subdomains]
    sent, received = Counter(), Counter()
    for src, msgs in enumerate(outboxes):
        for dst, raw in msgs:
            sent[(src, dst, raw)] += 1
            inbox[dst].append((src, raw))
    for dst, msgs in enumerate(inbox):
        for src, raw in msgs:
            received[(src, dst, raw)] += 1
    return inbox, sent, received


def expected_message_count(decomposition: Decomposition) -> int:
    return sum(1 for s in decomposition.subdomains for link in s.interfaces if link.count > 0)


@dataclass
class TrainResult:
    workers: list
    history: list  # one list of per-subdomain diagnostics per outer iteration
    traffic: list  # (messages sent, messages received) per outer iteration
    compute_time: float
    communication_time: float


def build_workers(decomposition: Decomposition, problem, net: MLPConfig, settings: TrainSettings, seed: int) -> list:
    workers = []
    for sub in decomposition.subdomains:
        pts = sample_collocation(sub, seed, problem)
        r, c = sub.label
        workers.append(SubdomainWorker(sub, pts, problem, net, settings, [seed, r, c, 0]))
    return workers


def train(
    decomposition: Decomposition,
    problem,
    net: MLPConfig,
    settings: TrainSettings,
    outer: int,
    seed: int = 0,
    backend: str = "sequential",
    callback=None,
    workers=None,
) -> TrainResult:
    """Outer iterations of local ALM training followed by a barrier exchange.

    ``callback(n, diagnostics, backend)`` is invoked after every exchange.
    """
    workers = workers if workers is not None else build_workers(decomposition, problem, net, settings, seed)
    runner = make_backend(backend, workers)
    history, traffic = [], []
    t_comp = t_comm = 0.0
    n_expected = expected_message_count(decomposition)
    try:
        for n in range(outer):
            t0 = time.perf_counter()
            results = runner.inner()
            t1 = time.perf_counter()
            outboxes = runner.outgoing()
            inbox, sent, received = route(decomposition, outboxes)
            if sent != received or sum(sent.values()) != n_expected:
                raise RuntimeError(f"message conservation violated at outer iteration {n}")
            runner.deliver(inbox)
            t2 = time.perf_counter()
            t_comp += t1 - t0
            t_comm += t2 - t1
            diags = []
            for sub, (epochs, d) in zip(decomposition.subdomains, results):
                d = dict(d)
                d.update(outer=n, subdomain=f"{sub.label[0]},{sub.label[1]}", inner_epochs=epochs)
                diags.append(d)
            history.append(diags)
            traffic.append((sum(sent.values()), sum(received.values())))
            if callback is not None:
                callback(n, diags, runner)
        final = runner.fetch()
    finally:
        runner.close()
    return TrainResult(list(final), history, traffic, t_comp, t_comm)
