"""Two-layer deformable parts tracker.

A coarse layer (whole-object correlation filter times a color posterior)
gives an approximate translation. Mid-level parts are then placed by
minimizing the energy of a spring system whose anchors are the part
filters' response peaks, and the box follows a similarity transform fitted
to the part motion.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from itertools import combinations

import numpy as np
from scipy.ndimage import uniform_filter

from . import correlation_filter as cf
from . import segmentation as seg
from .features import extract_features, window_cells
from .springs import SolverError, SpringSystem, _check_anchored, energy, solve_ida

__all__ = [
    "TrackerConfig",
    "Part",
    "Constellation",
    "CoarseLayer",
    "TrackerState",
    "FrameResult",
    "SimilarityTransform",
    "TrackerInitError",
    "part_layout",
    "topology_links",
    "initialize",
    "coarse_localize",
    "build_spring_system",
    "map_inference",
    "fit_transform",
    "update_parts",
    "update_coarse",
    "track_frame",
    "DeformablePartsTracker",
]

LAYOUTS = ("2x2", "3x3", "3x3ov")
TOPOLOGIES = ("full", "local", "star")
MODES = ("full", "coarse", "coarse_nocolor")


class TrackerInitError(ValueError):
    pass


@dataclass
class TrackerConfig:
    parts: str = "2x2"
    topology: str = "full"
    mode: str = "full"
    cell_size: int = 4
    padding: float = 2.0
    part_padding: float = 1.5
    lam: float = 1e-4
    kernel_sigma: float = 0.5
    output_sigma_factor: float = 0.1
    learn_rate: float = 0.02
    spring_rate: float = 0.95
    surround_factor: float = 1.6
    hist_rate: float = 0.05
    alpha_min: float = 0.2
    alpha_max: float = 2.0
    alpha_col_low: float = 0.1
    hsv_bins: tuple = (16, 16, 16)
    binarize_threshold: float = 0.5
    mrf_iterations: int = 3
    variance_floor: float = 0.25
    weight_gate: float = 0.5
    mask_gate: float = 0.2
    ida_tol: float = 1e-3
    ida_max_iter: int = 100

    def __post_init__(self):
        if self.parts not in LAYOUTS:
            raise ValueError(f"parts must be one of {LAYOUTS}, got {self.parts!r}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.hsv_bins = tuple(int(b) for b in self.hsv_bins)
        if len(self.hsv_bins) != 3 or min(self.hsv_bins) < 1:
            raise ValueError("hsv_bins needs three positive counts")
        for name in ("learn_rate", "spring_rate", "hist_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.cell_size < 1 or self.padding < 1 or self.part_padding < 1:
            raise ValueError("cell_size and paddings must be at least 1")
        if self.surround_factor <= 1:
            raise ValueError("surround_factor must exceed 1")

    @classmethod
    def from_mapping(cls, values):
        kinds = {f.name: type(f.default) for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in kinds:
                raise ValueError(f"unknown configuration key {key!r}")
            kind = kinds[key]
            if kind is tuple:
                text = raw if isinstance(raw, str) else ",".join(map(str, raw))
                kwargs[key] = tuple(int(v) for v in text.replace("x", ",").split(","))
            elif kind is str:
                kwargs[key] = str(raw).strip()
            else:
                kwargs[key] = kind(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        """Read ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
        return cls.from_mapping(values)


@dataclass
class Part:
    index: int
    position: np.ndarray
    size: tuple
    window: tuple
    filter: cf.Filter


@dataclass
class Constellation:
    parts: list
    links: np.ndarray
    preferred: np.ndarray
    spring_rate: float = 0.95

    @property
    def positions(self):
        return np.array([p.position for p in self.parts], dtype=float)


@dataclass
class CoarseLayer:
    root_filter: cf.Filter
    color_model: seg.ColorModel | None
    bbox: tuple
    prev_size: float
    window: tuple


@dataclass
class TrackerState:
    coarse: CoarseLayer
    constellation: Constellation | None
    config: TrackerConfig
    frame_index: int = 0


@dataclass
class FrameResult:
    bbox: tuple
    part_positions: np.ndarray
    part_weights: np.ndarray
    alpha_col: float
    updated_parts: np.ndarray
    translation: np.ndarray
    low_confidence: bool = False
    energy_initial: float = float("nan")
    energy_final: float = float("nan")
    solver_iterations: int = 0
    debug: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SimilarityTransform:
    scale: float = 1.0
    angle: float = 0.0
    translation: tuple = (0.0, 0.0)

    @property
    def matrix(self):
        c, s = np.cos(self.angle), np.sin(self.angle)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def apply_to_box(self, bbox):
        """Map the box center and scale its size; rotation is dropped."""
        x, y, w, h = bbox
        cx, cy = self.apply(np.array([x + w / 2.0, y + h / 2.0]))
        w2, h2 = w * self.scale, h * self.scale
        return (float(cx - w2 / 2.0), float(cy - h2 / 2.0), float(w2), float(h2))


def _center(bbox):
    x, y, w, h = bbox
    return np.array([x + w / 2.0, y + h / 2.0])


def part_layout(bbox, layout="2x2"):
    """Part centers (N, 2) and the shared part size (w, h) for a box."""
    x, y, w, h = bbox
    if layout == "2x2":
        fx, fy, size = [0.25, 0.75], [0.25, 0.75], (w / 2.0, h / 2.0)
    elif layout == "3x3":
        fx = fy = [1 / 6, 0.5, 5 / 6]
        size = (w / 3.0, h / 3.0)
    elif layout == "3x3ov":
        fx = fy = [0.25, 0.5, 0.75]
        size = (w / 2.0, h / 2.0)
    else:
        raise ValueError(f"unknown part layout {layout!r}")
    centers = np.array([(x + a * w, y + b * h) for b in fy for a in fx])
    return centers, size


def topology_links(n_rows, n_cols, topology="full"):
    """Index pairs linking parts laid out row-major on an n_rows x n_cols grid."""
    n = n_rows * n_cols
    if topology == "full":
        links = list(combinations(range(n), 2))
    elif topology == "local":
        links = []
        for r in range(n_rows):
            for c in range(n_cols):
                i = r * n_cols + c
                if c + 1 < n_cols:
                    links.append((i, i + 1))
                if r + 1 < n_rows:
                    links.append((i, i + n_cols))
    elif topology == "star":
        hub = (n_rows // 2) * n_cols + n_cols // 2 if n_rows % 2 else 0
        links = [(min(hub, j), max(hub, j)) for j in range(n) if j != hub]
    else:
        raise ValueError(f"unknown topology {topology!r}")
    return np.array(sorted(links), dtype=int).reshape(-1, 2)


def _window_size(size, padding, cell_size):
    cols, rows = window_cells((size[0] * padding, size[1] * padding), cell_size)
    return (cols * cell_size, rows * cell_size)


def _train_filter(image, center, window, target_size, config):
    patch = extract_features(image, center, window, config.cell_size)
    sigma = cf.label_sigma(target_size, config.cell_size, config.output_sigma_factor)
    labels = cf.gaussian_labels(*patch.shape, sigma)
    return cf.train(patch, labels, config.lam, config.kernel_sigma, config.learn_rate, sigma)


def _window_box(center, window):
    return (center[0] - window[0] / 2.0, center[1] - window[1] / 2.0, float(window[0]), float(window[1]))


def initialize(image, bbox, config=None):
    config = config or TrackerConfig()
    x, y, w, h = (float(v) for v in bbox)
    img_h, img_w = np.shape(image)[:2]
    if not (np.isfinite([x, y, w, h]).all() and w > 0 and h > 0 and w * h >= 256):
        raise TrackerInitError(f"degenerate initial box {bbox}: area must be at least 16x16 px")
    if x >= img_w or y >= img_h or x + w <= 0 or y + h <= 0:
        raise TrackerInitError(f"initial box {bbox} lies outside the {img_w}x{img_h} image")
    bbox = (x, y, w, h)
    center = _center(bbox)
    window = _window_size((w, h), config.padding, config.cell_size)
    root = _train_filter(image, center, window, (w, h), config)
    model = None
    if config.mode != "coarse_nocolor":
        model = seg.initial_model(image, bbox, config.surround_factor, config.hsv_bins)
    coarse = CoarseLayer(root, model, bbox, w * h, window)

    constellation = None
    if config.mode == "full":
        centers, size = part_layout(bbox, config.parts)
        part_window = _window_size(size, config.part_padding, config.cell_size)
        parts = [
            Part(i, c.copy(), size, part_window, _train_filter(image, c, part_window, size, config))
            for i, c in enumerate(centers)
        ]
        side = 2 if config.parts == "2x2" else 3
        links = topology_links(side, side, config.topology)
        preferred = np.linalg.norm(centers[links[:, 0]] - centers[links[:, 1]], axis=1)
        constellation = Constellation(parts, links, preferred, config.spring_rate)
    return TrackerState(coarse, constellation, config, 0)


def _color_cells(prob, window, shape, cell_size):
    """Box-filter a pixel map to cell size and sample it at every circular shift."""
    smooth = uniform_filter(prob, size=cell_size, mode="nearest")
    rows, cols = shape
    # the window's zero-shift point sits at pixel (w/2, h/2) of the crop
    ys = np.clip(np.round(window[1] / 2.0 - 0.5 + cf.wrapped_offsets(rows) * cell_size), 0, prob.shape[0] - 1)
    xs = np.clip(np.round(window[0] / 2.0 - 0.5 + cf.wrapped_offsets(cols) * cell_size), 0, prob.shape[1] - 1)
    return smooth[np.ix_(ys.astype(int), xs.astype(int))]


def _segment(state, image, center):
    config, coarse = state.config, state.coarse
    box = _window_box(center, coarse.window)
    w, h = coarse.bbox[2], coarse.bbox[3]
    prior = float(np.clip(w * h / (coarse.window[0] * coarse.window[1]), 1e-3, 1 - 1e-3))
    model = replace(coarse.color_model, prior_fg=prior)
    return seg.segment(
        image,
        box,
        model,
        coarse.prev_size,
        config.binarize_threshold,
        config.mrf_iterations,
        config.alpha_min,
        config.alpha_max,
        config.alpha_col_low,
    )


def coarse_localize(state, image, debug=None):
    """Translation of the object center from the root response times the color map.

    Returns ``(translation, segmentation, low_confidence)``; segmentation is
    None when color is disabled.
    """
    config, coarse = state.config, state.coarse
    center = _center(coarse.bbox)
    patch = extract_features(image, center, coarse.window, config.cell_size)
    response = cf.respond(coarse.root_filter, patch)
    segmentation = None
    product = response
    if config.mode != "coarse_nocolor":
        segmentation = _segment(state, image, center)
        prob = seg.color_probability(segmentation.posterior, segmentation.alpha_col)
        product = response * _color_cells(prob, coarse.window, response.shape, config.cell_size)
    if debug is not None:
        debug["root_response"] = response
        debug["coarse_product"] = product
        if segmentation is not None:
            debug["posterior"] = segmentation.posterior
            debug["mask"] = segmentation.mask
    scale = max(1.0, float(np.abs(product).max()))
    if float(np.ptp(product)) <= 1e-12 * scale:
        return np.zeros(2), segmentation, True
    _, (sy, sx) = cf.peak_shift(product)
    return np.array([sx, sy]) * config.cell_size, segmentation, False


def build_spring_system(state, image, translation):
    """Spring system for the parts displaced by ``translation``.

    Returns ``(system, stats, responses)``; ``stats[i]`` is None for a part
    whose response carries no positive mass.
    """
    config, cons = state.config, state.constellation
    displaced = cons.positions + np.asarray(translation, dtype=float)
    anchors = displaced.copy()
    static_k = np.zeros(len(cons.parts))
    stats, responses = [], []
    for i, part in enumerate(cons.parts):
        patch = extract_features(image, displaced[i], part.window, config.cell_size)
        response = cf.respond(part.filter, patch)
        responses.append(response)
        try:
            st = cf.response_stats(response, displaced[i], config.cell_size)
        except cf.UninformativeResponse:
            stats.append(None)
            continue
        stats.append(st)
        anchors[i] = st.peak_pos
        static_k[i] = max(st.peak_value, 0.0) / max(st.weighted_variance, config.variance_floor)
    links, mu = cons.links, cons.preferred
    anchor_dist = np.linalg.norm(anchors[links[:, 0]] - anchors[links[:, 1]], axis=1)
    dynamic_k = ((mu - anchor_dist) / mu) ** 2
    n = len(cons.parts)
    system = SpringSystem(
        dynamic_positions=displaced,
        anchor_positions=anchors,
        dynamic_springs=links,
        dynamic_stiffness=dynamic_k,
        nominal_lengths=mu,
        static_springs=np.column_stack([np.arange(n), np.arange(n)]),
        static_stiffness=static_k,
    )
    return system, stats, responses


def _tethered(system, strength=1e-6):
    """Pin parts that no anchor constrains to their starting positions.

    The tether is far weaker than any real spring so it only removes the
    free translation of unanchored groups.
    """
    try:
        _check_anchored(system)
        return system
    except SolverError as exc:
        loose = np.asarray(exc.nodes, dtype=int)
    scale = max(system.dynamic_stiffness.max(initial=0.0), system.static_stiffness.max(initial=0.0))
    k = strength * (scale if scale > 0 else 1.0)
    n_anchor = system.n_anchors
    return SpringSystem(
        dynamic_positions=system.dynamic_positions,
        anchor_positions=np.vstack([system.anchor_positions, system.dynamic_positions[loose]]),
        dynamic_springs=system.dynamic_springs,
        dynamic_stiffness=system.dynamic_stiffness,
        nominal_lengths=system.nominal_lengths,
        static_springs=np.vstack(
            [system.static_springs, np.column_stack([loose, n_anchor + np.arange(len(loose))])]
        ),
        static_stiffness=np.concatenate([system.static_stiffness, np.full(len(loose), k)]),
    )


def map_inference(system, tol=1e-3, max_iter=100):
    """Minimum-energy part positions; returns the solver report."""
    return solve_ida(_tethered(system), tol=tol, max_iter=max_iter)


def fit_transform(prev_parts, new_parts):
    """Least-squares similarity transform taking ``prev_parts`` onto ``new_parts``."""
    p = np.asarray(prev_parts, dtype=float)
    q = np.asarray(new_parts, dtype=float)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 2:
        raise ValueError("point sets must both have shape (N, 2)")
    mp, mq = p.mean(axis=0), q.mean(axis=0)
    pc, qc = p - mp, q - mq
    var = np.sum(pc**2) / len(p)
    if var < 1e-12:
        return SimilarityTransform(1.0, 0.0, tuple(mq - mp))
    cov = qc.T @ pc / len(p)
    u, s, vt = np.linalg.svd(cov)
    d = np.array([1.0, np.sign(np.linalg.det(u) * np.linalg.det(vt)) or 1.0])
    rot = u @ np.diag(d) @ vt
    scale = float(np.sum(s * d) / var)
    trans = mq - scale * rot @ mp
    return SimilarityTransform(scale, float(np.arctan2(rot[1, 0], rot[0, 0])), tuple(trans))


def _mask_fraction(segmentation, window_center, window, center, size):
    """Share of a part box's pixels that are foreground in the coarse mask."""
    if segmentation is None:
        return 1.0
    mask = segmentation.mask
    x0 = np.floor(window_center[0] - window[0] / 2.0)
    y0 = np.floor(window_center[1] - window[1] / 2.0)
    c0 = int(round(center[0] - size[0] / 2.0 - x0))
    r0 = int(round(center[1] - size[1] / 2.0 - y0))
    c1, r1 = c0 + int(round(size[0])), r0 + int(round(size[1]))
    area = max((c1 - c0) * (r1 - r0), 1)
    sub = mask[max(r0, 0) : max(r1, 0), max(c0, 0) : max(c1, 0)]
    return float(sub.sum()) / area


def part_weights(state, positions, displaced, responses):
    """Part filter responses read at the MAP positions."""
    cell = state.config.cell_size
    weights = np.empty(len(responses))
    for i, response in enumerate(responses):
        dx, dy = (positions[i] - displaced[i]) / cell
        weights[i] = cf.sample_response(response, (dy, dx))
    return weights


def update_gate(weights, mask_fractions, alpha_col, weight_gate=0.5, mask_gate=0.2):
    """Which parts may update: strong enough response and enough foreground."""
    weights = np.asarray(weights, dtype=float)
    strong = (weights >= weight_gate * weights.max()) & (weights > 0)
    if alpha_col >= 1.0:
        return strong
    return strong & (np.asarray(mask_fractions) >= mask_gate)


def update_parts(state, image, positions, weights, segmentation, window_center):
    """Gated part filter updates and preferred-distance blending (in place)."""
    config, cons = state.config, state.constellation
    alpha_col = 1.0 if segmentation is None else segmentation.alpha_col
    fractions = np.array(
        [
            _mask_fraction(segmentation, window_center, state.coarse.window, positions[i], p.size)
            for i, p in enumerate(cons.parts)
        ]
    )
    gate = update_gate(weights, fractions, alpha_col, config.weight_gate, config.mask_gate)
    for i, part in enumerate(cons.parts):
        if gate[i] and config.learn_rate > 0:
            patch = extract_features(image, positions[i], part.window, config.cell_size)
            part.filter = cf.update(part.filter, patch, config.learn_rate)
        part.position = np.array(positions[i], dtype=float)
    links = cons.links
    dist = np.linalg.norm(positions[links[:, 0]] - positions[links[:, 1]], axis=1)
    cons.preferred = cons.preferred * (1 - cons.spring_rate) + dist * cons.spring_rate
    return gate, fractions


def update_coarse(state, bbox, image, alpha_col):
    """Root filter and color model updates at the new box (in place)."""
    config, coarse = state.config, state.coarse
    if config.learn_rate > 0:
        patch = extract_features(image, _center(bbox), coarse.window, config.cell_size)
        coarse.root_filter = cf.update(coarse.root_filter, patch, config.learn_rate)
    if coarse.color_model is not None:
        gate = alpha_col == config.alpha_col_low
        coarse.color_model = seg.update_model(
            coarse.color_model, bbox, config.surround_factor, image, config.hist_rate, gate
        )
    coarse.bbox = tuple(float(v) for v in bbox)
    coarse.prev_size = bbox[2] * bbox[3]


def track_frame(state, image, debug=False):
    """One tracking iteration; returns ``(new_state, FrameResult)``.

    The input state is never modified, so a frame that raises leaves the
    caller's state intact.
    """
    state = copy.deepcopy(state)
    config = state.config
    dbg = {} if debug else None
    prev_center = _center(state.coarse.bbox)
    translation, segmentation, low_conf = coarse_localize(state, image, dbg)
    alpha_col = 1.0 if segmentation is None else segmentation.alpha_col

    if state.constellation is None:
        bbox = tuple(np.array(state.coarse.bbox) + np.array([*translation, 0.0, 0.0]))
        update_coarse(state, bbox, image, alpha_col)
        state.frame_index += 1
        result = FrameResult(
            bbox=state.coarse.bbox,
            part_positions=np.empty((0, 2)),
            part_weights=np.empty(0),
            alpha_col=alpha_col,
            updated_parts=np.empty(0, dtype=bool),
            translation=translation,
            low_confidence=low_conf,
            debug=dbg or {},
        )
        return state, result

    sizes = [p.size for p in state.constellation.parts]
    prev_positions = state.constellation.positions
    system, stats, responses = build_spring_system(state, image, translation)
    report = map_inference(system, config.ida_tol, config.ida_max_iter)
    positions = report.final_positions
    transform = fit_transform(prev_positions, positions)
    bbox = transform.apply_to_box(state.coarse.bbox)
    if not (np.isfinite(bbox).all() and bbox[2] > 0 and bbox[3] > 0):
        raise SolverError("box update produced a degenerate box")
    weights = part_weights(state, positions, system.dynamic_positions, responses)
    gate, fractions = update_parts(state, image, positions, weights, segmentation, prev_center)
    update_coarse(state, bbox, image, alpha_col)
    if [p.size for p in state.constellation.parts] != sizes:
        raise RuntimeError("part sizes changed during a frame")
    state.frame_index += 1
    if dbg is not None:
        dbg["part_responses"] = responses
        dbg["mask_fractions"] = fractions
    result = FrameResult(
        bbox=state.coarse.bbox,
        part_positions=positions,
        part_weights=weights,
        alpha_col=alpha_col,
        updated_parts=gate,
        translation=translation,
        low_confidence=low_conf,
        energy_initial=energy(system),
        energy_final=energy(system, positions),
        solver_iterations=report.iterations,
        debug=dbg or {},
    )
    return state, result


class DeformablePartsTracker:
    """Stateful wrapper: ``initialize`` once, then ``update`` per frame."""

    def __init__(self, config=None):
        self.config = config or TrackerConfig()
        self.state = None
        self.last_result = None

    def initialize(self, image, bbox):
        self.state = initialize(image, bbox, self.config)
        self.last_result = None

    def track(self, image, debug=False):
        if self.state is None:
            raise RuntimeError("tracker used before initialize()")
        self.state, self.last_result = track_frame(self.state, image, debug)
        return self.last_result

    def update(self, image):
        return self.track(image).bbox
