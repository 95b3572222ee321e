"""End-to-end annotation loop: warm-up, then merge/select/query/sieve/retrain.

Every round writes its artifacts (probability maps, merged segmentations,
batch manifest, sieved dataset, model) under ``<run_dir>/round_<t>/`` so a run
can be audited or resumed.  All randomness derives from the config seed, so
identical configs reproduce identical models bit for bit.
"""

from __future__ import annotations

import json
import os
import sys
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import acquisition, merge, metrics, model as model_mod, sieve
from .baseseg import SlicConfig, grid_segmentation, slic
from .oracle import UnanswerableQueryError, answer_query
from .raster import (
    Dataset,
    LabelMap,
    ProbMap,
    Segmentation,
    load_dataset,
    load_image,
    load_label_map,
    load_prob_map,
    load_segmentation,
    save_prob_map,
    save_segmentation,
)


class LoopError(Exception):
    """Loop orchestration failure (bad state, missing artifact, empty batch)."""


STATUS_PENDING = "pending"
STATUS_ANSWERED = "answered"
STATUS_SKIPPED = "skipped"


@dataclass
class QueryRecord:
    query_id: int
    image_id: int
    round: int
    pixels: np.ndarray  # sorted flat pixel indices, snapshot at query time
    answer: int | None = None
    status: str = STATUS_PENDING

    @property
    def clicks(self) -> int:
        return 1 if self.status == STATUS_ANSWERED else 0

    def to_json(self) -> dict:
        return {
            "query_id": self.query_id,
            "image_id": self.image_id,
            "round": self.round,
            "status": self.status,
            "answer": self.answer,
            "pixels": [int(p) for p in self.pixels],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "QueryRecord":
        return cls(
            query_id=int(doc["query_id"]),
            image_id=int(doc["image_id"]),
            round=int(doc["round"]),
            pixels=np.asarray(doc["pixels"], dtype=np.int64),
            answer=None if doc["answer"] is None else int(doc["answer"]),
            status=doc["status"],
        )


@dataclass(frozen=True)
class RunConfig:
    run_dir: Path
    train_manifest: Path
    val_manifest: Path | None = None
    num_classes: int = 4
    ignore_id: int = 255
    class_names: tuple[str, ...] | None = None
    base_algo: str = "slic"
    base_region_size: int = 64
    base_compactness: float = 10.0
    base_iterations: int = 5
    epsilon: float = 0.10
    merge_fraction: float = 1.0
    budget: int = 40
    rounds: int = 3
    sieve_sample_count: int = 20
    sieve_min_pixels: int = 5
    learning_rate: float = 0.5
    epochs: int = 60
    batch_size: int = 256
    seed: int = 0
    oracle: str = "simulated"
    strategy: str = "amsp_s"
    partial: bool = False
    http_host: str = "127.0.0.1"
    http_port: int = 8008

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.base_algo not in ("slic", "grid"):
            raise ValueError("base_algo must be 'slic' or 'grid'")
        if self.oracle not in ("simulated", "human"):
            raise ValueError("oracle must be 'simulated' or 'human'")
        if self.strategy not in ("amsp_s", "random"):
            raise ValueError("strategy must be 'amsp_s' or 'random'")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")

    @property
    def palette(self) -> tuple[str, ...]:
        if self.class_names is not None:
            return self.class_names
        return tuple(f"class_{c}" for c in range(self.num_classes))


_CONFIG_PATHS = ("run_dir", "train_manifest", "val_manifest")


def load_run_config(path) -> RunConfig:
    """Flat TOML file; relative paths resolve against the file's directory."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    known = {f.name for f in RunConfig.__dataclass_fields__.values()}
    unknown = set(doc) - known
    if unknown:
        raise LoopError(f"{path}: unknown config keys {sorted(unknown)}")
    kwargs: dict = dict(doc)
    for key in _CONFIG_PATHS:
        if kwargs.get(key) is not None:
            kwargs[key] = (path.parent / kwargs[key]).resolve()
    if "class_names" in kwargs and kwargs["class_names"] is not None:
        kwargs["class_names"] = tuple(kwargs["class_names"])
    if "run_dir" not in kwargs or "train_manifest" not in kwargs:
        raise LoopError(f"{path}: run_dir and train_manifest are required")
    return RunConfig(**kwargs)


def _config_to_json(cfg: RunConfig) -> dict:
    doc = {}
    for name in RunConfig.__dataclass_fields__:
        value = getattr(cfg, name)
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, tuple):
            value = list(value)
        doc[name] = value
    return doc


def _config_from_json(doc: dict) -> RunConfig:
    kwargs = dict(doc)
    for key in _CONFIG_PATHS:
        if kwargs.get(key) is not None:
            kwargs[key] = Path(kwargs[key])
    if kwargs.get("class_names") is not None:
        kwargs["class_names"] = tuple(kwargs["class_names"])
    return RunConfig(**kwargs)


@dataclass
class LoopState:
    config: RunConfig
    round: int  # last completed round; -1 before warm-up, 0 after
    queries: list[QueryRecord] = field(default_factory=list)
    next_query_id: int = 0
    model: model_mod.ModelParams | None = None

    @property
    def clicks_spent(self) -> int:
        return sum(q.clicks for q in self.queries)

    def answered(self) -> list[QueryRecord]:
        return [q for q in self.queries if q.status == STATUS_ANSWERED]


def _derived_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _write_json_atomic(path: Path, doc) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2))
    os.replace(tmp, path)


class SimulatedOracleBroker:
    """Answers queries directly from ground truth; skips all-ignore regions."""

    def __init__(self, gt_by_image: Mapping[int, LabelMap]):
        self.gt_by_image = gt_by_image

    def collect(
        self,
        records: list[QueryRecord],
        refill: Callable[[], QueryRecord | None],
        on_update: Callable[[], None] | None = None,
    ) -> list[QueryRecord]:
        queue = deque(r for r in records if r.status == STATUS_PENDING)
        answered = []
        while queue:
            rec = queue.popleft()
            try:
                ans = answer_query(rec.pixels, self.gt_by_image[rec.image_id])
            except UnanswerableQueryError:
                rec.status = STATUS_SKIPPED
                nxt = refill()
                if nxt is not None:
                    queue.append(nxt)
            else:
                rec.answer = int(ans.dominant)
                rec.status = STATUS_ANSWERED
                answered.append(rec)
            if on_update is not None:
                on_update()
        return answered


class AnnotationLoop:
    """Owns run-directory layout, artifact persistence, and round execution."""

    def __init__(self, cfg: RunConfig, broker=None):
        self.cfg = cfg
        self.run_dir = Path(cfg.run_dir)
        self.dataset = load_dataset(cfg.train_manifest)
        self.images: dict[int, np.ndarray] = {}
        self.gt: dict[int, LabelMap] = {}
        for entry in self.dataset.images:
            self.images[entry.image_id] = load_image(entry.image_path)
            if entry.label_path is not None and Path(entry.label_path).exists():
                self.gt[entry.image_id] = load_label_map(
                    entry.label_path, cfg.num_classes, cfg.ignore_id
                )
        if broker is None:
            if len(self.gt) < len(self.images):
                raise LoopError(
                    "simulated oracle needs ground-truth labels for every image"
                )
            broker = SimulatedOracleBroker(self.gt)
        self.broker = broker
        self.state = LoopState(config=cfg, round=-1)
        self.base_segs: dict[int, Segmentation] = {}

    # -- paths ------------------------------------------------------------

    def round_dir(self, t: int) -> Path:
        return self.run_dir / f"round_{t}"

    def _base_path(self, image_id: int) -> Path:
        return self.run_dir / "base" / f"{image_id:04d}.seg"

    def _probs_path(self, t: int, image_id: int) -> Path:
        return self.round_dir(t) / f"probs_{image_id:04d}.ppf"

    def _merged_path(self, t: int, image_id: int) -> Path:
        return self.round_dir(t) / f"merged_{image_id:04d}.seg"

    def _state_path(self) -> Path:
        return self.run_dir / "state.json"

    def _queries_path(self) -> Path:
        return self.run_dir / "queries.json"

    # -- persistence --------------------------------------------------------

    def persist(self) -> None:
        rounds_queried = max((q.round for q in self.state.queries), default=-1) + 1
        assert self.state.clicks_spent <= rounds_queried * self.cfg.budget
        self.run_dir.mkdir(parents=True, exist_ok=True)
        _write_json_atomic(
            self._queries_path(), [q.to_json() for q in self.state.queries]
        )
        _write_json_atomic(
            self._state_path(),
            {
                "round": self.state.round,
                "next_query_id": self.state.next_query_id,
                "clicks_spent": self.state.clicks_spent,
                "config": _config_to_json(self.cfg),
            },
        )

    def ensure_base_segmentations(self) -> None:
        if self.base_segs:
            return
        (self.run_dir / "base").mkdir(parents=True, exist_ok=True)
        for image_id, img in self.images.items():
            path = self._base_path(image_id)
            if path.exists():
                seg = load_segmentation(path, expected_shape=(img.shape[1], img.shape[0]))
            else:
                seg = self._segment(img)
                save_segmentation(seg, path)
            self.base_segs[image_id] = seg

    def _segment(self, img: np.ndarray) -> Segmentation:
        h, w, _ = img.shape
        if self.cfg.base_algo == "grid":
            cell = max(1, round(self.cfg.base_region_size ** 0.5))
            return grid_segmentation(w, h, cell)
        return slic(
            img,
            SlicConfig(
                target_region_size=self.cfg.base_region_size,
                compactness=self.cfg.base_compactness,
                iterations=self.cfg.base_iterations,
            ),
        )

    # -- querying -----------------------------------------------------------

    def _make_record(self, image_id: int, seg: Segmentation, region_id: int, t: int) -> QueryRecord:
        pixels = np.sort(np.flatnonzero(seg.region_ids.ravel() == region_id))
        rec = QueryRecord(
            query_id=self.state.next_query_id,
            image_id=image_id,
            round=t,
            pixels=pixels,
        )
        self.state.next_query_id += 1
        self.state.queries.append(rec)
        return rec

    def _excluded_masks(self) -> dict[int, np.ndarray]:
        masks: dict[int, np.ndarray] = {}
        for rec in self.state.answered():
            img = self.images[rec.image_id]
            mask = masks.setdefault(
                rec.image_id, np.zeros(img.shape[0] * img.shape[1], dtype=bool)
            )
            mask[rec.pixels] = True
        return masks

    def _collect_batch(
        self,
        t: int,
        ranked: list[tuple[int, int]],
        segs: Mapping[int, Segmentation],
    ) -> list[QueryRecord]:
        """Query up to budget regions from the ranked (image, region) list.

        Records already persisted for this round (a resumed run) are reused;
        refills walk further down the ranking so skips never shrink the batch
        unless candidates run out or partial mode accepts fewer.
        """
        existing = [q for q in self.state.queries if q.round == t]
        # region ids are not persisted; match resumed records by pixel snapshot
        taken_pixels = {(q.image_id, q.pixels.tobytes()) for q in existing}
        records = list(existing)
        cursor = 0

        def next_candidate() -> QueryRecord | None:
            nonlocal cursor
            while cursor < len(ranked):
                image_id, region_id = ranked[cursor]
                cursor += 1
                pixels = np.sort(
                    np.flatnonzero(segs[image_id].region_ids.ravel() == region_id)
                )
                key = (image_id, pixels.tobytes())
                if key in taken_pixels:
                    continue
                taken_pixels.add(key)
                rec = QueryRecord(
                    query_id=self.state.next_query_id,
                    image_id=image_id,
                    round=t,
                    pixels=pixels,
                )
                self.state.next_query_id += 1
                self.state.queries.append(rec)
                return rec
            return None

        while len([r for r in records if r.status != STATUS_SKIPPED]) < self.cfg.budget:
            rec = next_candidate()
            if rec is None:
                break
            records.append(rec)
        if not records:
            raise LoopError(f"round {t}: no eligible candidates to query")
        self.persist()

        def refill() -> QueryRecord | None:
            if self.cfg.partial:
                return None
            rec = next_candidate()
            if rec is not None:
                records.append(rec)
            return rec

        self.broker.collect(records, refill, on_update=self.persist)
        answered = [r for r in records if r.status == STATUS_ANSWERED]
        if not answered:
            raise LoopError(f"round {t}: every candidate query was unanswerable")
        self.persist()
        return answered

    # -- rounds ---------------------------------------------------------------

    def warmup(self) -> LoopState:
        if self.state.round >= 0:
            raise LoopError("warm-up already completed")
        self.ensure_base_segmentations()
        pairs = [
            (image_id, region_id)
            for image_id in sorted(self.base_segs)
            for region_id in range(self.base_segs[image_id].num_regions)
        ]
        if self.cfg.budget > len(pairs):
            raise LoopError(
                f"budget {self.cfg.budget} exceeds {len(pairs)} base superpixels"
            )
        rng = np.random.default_rng(_derived_seed(self.cfg.seed, 0, 0))
        ranked = [pairs[i] for i in rng.permutation(len(pairs))]
        self._collect_batch(0, ranked, self.base_segs)
        self._fit_round(0, apply_sieve=False, probs_by_image=None)
        return self.state

    def run_round(self, t: int | None = None) -> LoopState:
        if self.state.round < 0:
            raise LoopError("warm-up has not run yet")
        if t is None:
            t = self.state.round + 1
        if t != self.state.round + 1:
            raise LoopError(f"cannot run round {t} from round {self.state.round}")
        if t > self.cfg.rounds:
            raise LoopError(f"round {t} exceeds configured final round {self.cfg.rounds}")
        if self.state.model is None:
            raise LoopError("no trained model available")
        self.ensure_base_segmentations()
        rdir = self.round_dir(t)
        rdir.mkdir(parents=True, exist_ok=True)

        resuming = any(q.round == t for q in self.state.queries)
        probs_by_image = self._round_probs(t, strict=resuming)

        if self.cfg.strategy == "amsp_s":
            segs, ranked = self._ranked_amsp(t, probs_by_image, resuming)
        else:
            segs, ranked = self._ranked_random(t)

        answered_batch = self._collect_batch(t, ranked, segs)
        del answered_batch

        apply_sieve = self.cfg.strategy == "amsp_s"
        self._fit_round(t, apply_sieve=apply_sieve, probs_by_image=probs_by_image)
        return self.state

    def _round_probs(self, t: int, strict: bool) -> dict[int, ProbMap]:
        """Per-image ProbMaps from theta_{t-1}; loaded when persisted, else computed.

        When resuming a round whose batch already exists, the persisted maps
        are the ones selection saw, so a missing file is an error rather than
        something to silently recompute.
        """
        probs: dict[int, ProbMap] = {}
        for image_id, img in self.images.items():
            path = self._probs_path(t, image_id)
            if path.exists():
                probs[image_id] = load_prob_map(path)
            elif strict:
                raise LoopError(f"round {t}: missing probability map artifact {path}")
            else:
                pmap = model_mod.predict(self.state.model, img)
                save_prob_map(pmap, path)
                probs[image_id] = pmap
        return probs

    def _ranked_amsp(
        self, t: int, probs_by_image: Mapping[int, ProbMap], resuming: bool
    ) -> tuple[dict[int, Segmentation], list[tuple[int, int]]]:
        merged: dict[int, Segmentation] = {}
        stats_by_image: dict[int, list[merge.RegionStats]] = {}
        mcfg = merge.MergeConfig(
            epsilon=self.cfg.epsilon, merge_fraction=self.cfg.merge_fraction
        )
        for image_id in sorted(self.images):
            path = self._merged_path(t, image_id)
            if path.exists():
                seg = load_segmentation(path)
            elif resuming:
                raise LoopError(f"round {t}: missing merged segmentation artifact {path}")
            else:
                seg = merge.adaptive_merge(
                    self.base_segs[image_id], probs_by_image[image_id], mcfg
                )
                save_segmentation(seg, path)
            merged[image_id] = seg
            stats_by_image[image_id] = merge.region_stats(seg, probs_by_image[image_id])

        popularity = acquisition.class_popularity(
            stats_by_image.values(), self.cfg.num_classes
        )
        candidates = acquisition.score_candidates(stats_by_image, popularity)
        try:
            eligible = acquisition.select_batch(
                candidates,
                budget=len(candidates),
                excluded_pixels=self._excluded_masks(),
                segmentations=merged,
            )
        except ValueError as exc:
            raise LoopError(f"round {t}: {exc}") from exc
        ranked = [(c.image_id, c.region_id) for c in eligible]
        _write_json_atomic(
            self.round_dir(t) / "batch.json",
            [
                {
                    "image_id": c.image_id,
                    "region_id": c.region_id,
                    "pixel_count": c.stats.pixel_count,
                }
                for c in eligible[: self.cfg.budget]
            ],
        )
        return merged, ranked

    def _ranked_random(self, t: int) -> tuple[dict[int, Segmentation], list[tuple[int, int]]]:
        excluded = self._excluded_masks()
        pool = []
        for image_id in sorted(self.base_segs):
            seg = self.base_segs[image_id]
            if image_id in excluded:
                ok = acquisition.eligible_region_mask(seg, excluded[image_id])
            else:
                ok = np.ones(seg.num_regions, dtype=bool)
            pool.extend((image_id, int(r)) for r in np.flatnonzero(ok))
        rng = np.random.default_rng(_derived_seed(self.cfg.seed, t, 0))
        return self.base_segs, [pool[i] for i in rng.permutation(len(pool))]

    def _fit_round(
        self,
        t: int,
        apply_sieve: bool,
        probs_by_image: Mapping[int, ProbMap] | None,
    ) -> None:
        rdir = self.round_dir(t)
        rdir.mkdir(parents=True, exist_ok=True)
        scfg = sieve.SieveConfig(
            sample_count=self.cfg.sieve_sample_count,
            min_pixels_for_knee=self.cfg.sieve_min_pixels,
        )
        dataset = sieve.build_sieved_dataset(
            self.state.answered(),
            probs_by_image or {},
            scfg,
            num_classes=self.cfg.num_classes,
            apply_sieve=apply_sieve,
        )
        sieve.save_sieved(dataset, rdir / "sieved.svd")
        tcfg = model_mod.TrainConfig(
            learning_rate=self.cfg.learning_rate,
            epochs=self.cfg.epochs,
            batch_size=self.cfg.batch_size,
            seed=_derived_seed(self.cfg.seed, t, 1),
        )
        self.state.model = model_mod.train(dataset, self.images, cfg=tcfg)
        model_mod.save_model(self.state.model, rdir / "model.mlp")
        self.state.round = t
        self.persist()

    # -- whole runs ------------------------------------------------------------

    def run(self) -> LoopState:
        if self.state.round < 0:
            self.warmup()
        while self.state.round < self.cfg.rounds:
            self.run_round()
        return self.state

    def validation_miou(self) -> float:
        if self.cfg.val_manifest is None:
            raise LoopError("no validation manifest configured")
        if self.state.model is None:
            raise LoopError("no trained model to evaluate")
        val = load_dataset(self.cfg.val_manifest)
        pairs = []
        for entry in val.images:
            img = load_image(entry.image_path)
            gt = load_label_map(entry.label_path, self.cfg.num_classes, self.cfg.ignore_id)
            pred = predicted_label_map(self.state.model, img, self.cfg.ignore_id)
            pairs.append((pred, gt))
        return metrics.dataset_miou(pairs)


def predicted_label_map(model: model_mod.ModelParams, image: np.ndarray, ignore_id: int) -> LabelMap:
    pmap = model_mod.predict(model, image)
    data = np.argmax(pmap.planes, axis=0).astype(
        np.uint8 if model.num_classes <= 255 else np.uint16
    )
    return LabelMap(
        width=pmap.width,
        height=pmap.height,
        data=data,
        ignore_id=ignore_id,
        num_classes=model.num_classes,
    )


def run_loop(cfg: RunConfig, broker=None) -> LoopState:
    """Fresh run: warm-up then rounds 1..cfg.rounds."""
    return AnnotationLoop(cfg, broker=broker).run()


def load_engine(state_path, broker=None) -> AnnotationLoop:
    """Rebuild a loop engine from a persisted state file, without running it."""
    state_path = Path(state_path)
    try:
        doc = json.loads(state_path.read_text())
        cfg = _config_from_json(doc["config"])
        completed = int(doc["round"])
        next_query_id = int(doc["next_query_id"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise LoopError(f"corrupted state file {state_path}: {exc}") from exc
    cfg = replace(cfg, run_dir=state_path.parent)

    engine = AnnotationLoop(cfg, broker=broker)
    queries_path = engine._queries_path()
    if queries_path.exists():
        try:
            engine.state.queries = [
                QueryRecord.from_json(q) for q in json.loads(queries_path.read_text())
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise LoopError(f"corrupted state file {queries_path}: {exc}") from exc
    engine.state.round = completed
    engine.state.next_query_id = next_query_id
    if completed >= 0:
        model_path = engine.round_dir(completed) / "model.mlp"
        if not model_path.exists():
            raise LoopError(f"missing model artifact {model_path}")
        engine.state.model = model_mod.load_model(model_path)
    return engine


def resume(state_path, broker=None) -> LoopState:
    """Continue a persisted run to its final round (no-op when done)."""
    engine = load_engine(state_path, broker=broker)
    # Unresolved queries for an in-flight round are replayed by run_round
    # (warm-up handles its own replay inside run()).
    if engine.state.round >= 0:
        pending_round = max((q.round for q in engine.state.queries), default=-1)
        if pending_round > engine.state.round:
            engine.run_round(pending_round)
    return engine.run()


def loop_status(run_dir) -> dict:
    run_dir = Path(run_dir)
    state_path = run_dir / "state.json"
    if not state_path.exists():
        raise LoopError(f"no run state under {run_dir}")
    doc = json.loads(state_path.read_text())
    queries = []
    queries_path = run_dir / "queries.json"
    if queries_path.exists():
        queries = json.loads(queries_path.read_text())
    pending = sum(1 for q in queries if q["status"] == STATUS_PENDING)
    answered = sum(1 for q in queries if q["status"] == STATUS_ANSWERED)
    return {
        "round": doc["round"],
        "final_round": doc["config"]["rounds"],
        "pending": pending,
        "answered": answered,
        "clicks_spent": doc["clicks_spent"],
    }
