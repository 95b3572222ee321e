import json
import shutil

import numpy as np
import pytest

from segal.loop import (
    AnnotationLoop,
    LoopError,
    QueryRecord,
    RunConfig,
    SimulatedOracleBroker,
    STATUS_ANSWERED,
    STATUS_PENDING,
    STATUS_SKIPPED,
    _derived_seed,
    load_engine,
    load_run_config,
    loop_status,
    resume,
    run_loop,
)
from segal.raster import LabelMap, load_label_map, save_label_map
from segal.synthetic import ShapesConfig, generate_shapes


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    generate_shapes(root, ShapesConfig(num_train=6, num_val=2, size=32, seed=21))
    return root


def fast_config(data_dir, run_dir, **overrides) -> RunConfig:
    kwargs = dict(
        run_dir=run_dir,
        train_manifest=data_dir / "train.json",
        val_manifest=data_dir / "val.json",
        base_algo="grid",
        base_region_size=16,
        budget=10,
        rounds=2,
        epochs=40,
        seed=3,
    )
    kwargs.update(overrides)
    return RunConfig(**kwargs)


class TestRunConfig:
    def test_validation(self, data_dir, tmp_path):
        with pytest.raises(ValueError):
            fast_config(data_dir, tmp_path, budget=0)
        with pytest.raises(ValueError):
            fast_config(data_dir, tmp_path, strategy="greedy")
        with pytest.raises(ValueError):
            fast_config(data_dir, tmp_path, oracle="psychic")
        with pytest.raises(ValueError):
            fast_config(data_dir, tmp_path, base_algo="watershed")
        with pytest.raises(ValueError):
            fast_config(data_dir, tmp_path, num_classes=4, class_names=("a", "b"))

    def test_palette_defaults(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path)
        assert cfg.palette == ("class_0", "class_1", "class_2", "class_3")
        named = fast_config(data_dir, tmp_path, class_names=("bg", "a", "b", "c"))
        assert named.palette == ("bg", "a", "b", "c")

    def test_toml_loading_resolves_relative_paths(self, data_dir, tmp_path):
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text(
            'run_dir = "out"\n'
            f'train_manifest = "{data_dir}/train.json"\n'
            "budget = 7\n"
            'strategy = "random"\n'
        )
        cfg = load_run_config(cfg_path)
        assert cfg.run_dir == (tmp_path / "out").resolve()
        assert cfg.budget == 7 and cfg.strategy == "random"

    def test_toml_unknown_key_rejected(self, tmp_path):
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text('run_dir = "out"\ntrain_manifest = "t.json"\nbugdet = 3\n')
        with pytest.raises(LoopError, match="unknown config keys"):
            load_run_config(cfg_path)

    def test_toml_requires_paths(self, tmp_path):
        cfg_path = tmp_path / "run.toml"
        cfg_path.write_text("budget = 3\n")
        with pytest.raises(LoopError, match="required"):
            load_run_config(cfg_path)


class TestDerivedSeeds:
    def test_stable_values(self):
        # Frozen: derived seeds must never drift, or resumed runs diverge.
        assert _derived_seed(0, 0, 0) == _derived_seed(0, 0, 0)
        assert _derived_seed(0, 0, 0) != _derived_seed(0, 0, 1)
        assert _derived_seed(0, 1, 0) != _derived_seed(1, 0, 0)

    def test_matches_seed_sequence(self):
        want = int(np.random.SeedSequence([7, 2, 1]).generate_state(1)[0])
        assert _derived_seed(7, 2, 1) == want


class TestQueryRecord:
    def test_json_round_trip(self):
        rec = QueryRecord(
            query_id=5, image_id=2, round=1,
            pixels=np.array([3, 8, 9]), answer=1, status=STATUS_ANSWERED,
        )
        back = QueryRecord.from_json(rec.to_json())
        assert back.query_id == 5 and back.answer == 1
        np.testing.assert_array_equal(back.pixels, rec.pixels)
        assert back.clicks == 1

    def test_pending_and_skipped_cost_nothing(self):
        rec = QueryRecord(query_id=0, image_id=0, round=0, pixels=np.array([1]))
        assert rec.clicks == 0
        rec.status = STATUS_SKIPPED
        assert rec.clicks == 0


class TestSimulatedBroker:
    def test_answers_from_ground_truth(self):
        gt = LabelMap(width=3, height=1, data=np.array([[1, 1, 0]]),
                      ignore_id=255, num_classes=2)
        broker = SimulatedOracleBroker({0: gt})
        rec = QueryRecord(query_id=0, image_id=0, round=0, pixels=np.array([0, 1, 2]))
        answered = broker.collect([rec], refill=lambda: None)
        assert answered == [rec]
        assert rec.answer == 1 and rec.status == STATUS_ANSWERED

    def test_unanswerable_is_skipped_and_refilled(self):
        gt = LabelMap(width=2, height=1, data=np.array([[255, 0]]),
                      ignore_id=255, num_classes=1)
        broker = SimulatedOracleBroker({0: gt})
        bad = QueryRecord(query_id=0, image_id=0, round=0, pixels=np.array([0]))
        good = QueryRecord(query_id=1, image_id=0, round=0, pixels=np.array([1]))
        handed_out = []

        def refill():
            handed_out.append(good)
            return good

        answered = broker.collect([bad], refill=refill)
        assert bad.status == STATUS_SKIPPED
        assert handed_out and answered == [good]


class TestWarmup:
    def test_budget_larger_than_pool_rejected(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run", budget=10_000)
        with pytest.raises(LoopError, match="exceeds"):
            AnnotationLoop(cfg).warmup()

    def test_artifacts_and_accounting(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        engine = AnnotationLoop(cfg)
        state = engine.warmup()
        assert state.round == 0
        assert state.clicks_spent == cfg.budget
        run = tmp_path / "run"
        assert (run / "state.json").exists()
        assert (run / "queries.json").exists()
        assert (run / "base" / "0000.seg").exists()
        assert (run / "round_0" / "sieved.svd").exists()
        assert (run / "round_0" / "model.mlp").exists()

    def test_warmup_twice_rejected(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        engine = AnnotationLoop(cfg)
        engine.warmup()
        with pytest.raises(LoopError, match="already"):
            engine.warmup()

    def test_round_before_warmup_rejected(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        with pytest.raises(LoopError, match="warm-up"):
            AnnotationLoop(cfg).run_round(1)


@pytest.fixture(scope="module")
def finished(data_dir, tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("full")
    cfg = fast_config(data_dir, run_dir)
    engine = AnnotationLoop(cfg)
    engine.run()
    return cfg, engine


class TestFullRun:
    def test_round_and_clicks(self, finished):
        cfg, engine = finished
        assert engine.state.round == cfg.rounds
        assert engine.state.clicks_spent == cfg.budget * (cfg.rounds + 1)

    def test_round_artifacts(self, finished):
        cfg, engine = finished
        for t in (1, 2):
            rdir = engine.round_dir(t)
            assert (rdir / "batch.json").exists()
            assert (rdir / "sieved.svd").exists()
            assert (rdir / "model.mlp").exists()
            for image_id in engine.images:
                assert (rdir / f"probs_{image_id:04d}.ppf").exists()
                assert (rdir / f"merged_{image_id:04d}.seg").exists()

    def test_batch_json_shape(self, finished):
        cfg, engine = finished
        batch = json.loads((engine.round_dir(1) / "batch.json").read_text())
        assert 0 < len(batch) <= cfg.budget
        assert {"image_id", "region_id", "pixel_count"} <= set(batch[0])

    def test_no_pixel_annotated_twice(self, finished):
        _, engine = finished
        seen: dict[int, set[int]] = {}
        for rec in engine.state.answered():
            pixel_set = set(rec.pixels.tolist())
            already = seen.setdefault(rec.image_id, set())
            assert not (already & pixel_set)
            already |= pixel_set

    def test_validation_miou_reasonable(self, finished):
        _, engine = finished
        score = engine.validation_miou()
        assert 0.0 <= score <= 1.0

    def test_status_reflects_run(self, finished):
        cfg, engine = finished
        status = loop_status(cfg.run_dir)
        assert status["round"] == cfg.rounds
        assert status["final_round"] == cfg.rounds
        assert status["pending"] == 0
        assert status["answered"] == engine.state.clicks_spent

    def test_extra_round_rejected(self, finished):
        _, engine = finished
        with pytest.raises(LoopError, match="exceeds"):
            engine.run_round()

    def test_out_of_order_round_rejected(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run", rounds=3)
        engine = AnnotationLoop(cfg)
        engine.warmup()
        with pytest.raises(LoopError, match="cannot run round"):
            engine.run_round(2)


class TestDeterminism:
    def test_same_seed_same_model_bytes(self, data_dir, tmp_path):
        cfg_a = fast_config(data_dir, tmp_path / "a")
        cfg_b = fast_config(data_dir, tmp_path / "b")
        run_loop(cfg_a)
        run_loop(cfg_b)
        final = f"round_{cfg_a.rounds}/model.mlp"
        assert (tmp_path / "a" / final).read_bytes() == (tmp_path / "b" / final).read_bytes()

    def test_different_seed_differs(self, data_dir, tmp_path):
        cfg_a = fast_config(data_dir, tmp_path / "a")
        cfg_b = fast_config(data_dir, tmp_path / "b", seed=4)
        run_loop(cfg_a)
        run_loop(cfg_b)
        final = f"round_{cfg_a.rounds}/model.mlp"
        assert (tmp_path / "a" / final).read_bytes() != (tmp_path / "b" / final).read_bytes()


class TestRandomStrategy:
    def test_runs_to_completion(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run", strategy="random")
        state = run_loop(cfg)
        assert state.round == cfg.rounds
        assert state.clicks_spent == cfg.budget * (cfg.rounds + 1)
        # random selection queries base superpixels without merging
        assert not (tmp_path / "run" / "round_1" / "merged_0000.seg").exists()


class TestResume:
    def test_resume_after_warmup_matches_uninterrupted(self, data_dir, tmp_path):
        cfg_full = fast_config(data_dir, tmp_path / "full")
        run_loop(cfg_full)

        cfg_half = fast_config(data_dir, tmp_path / "half")
        AnnotationLoop(cfg_half).warmup()
        state = resume(tmp_path / "half" / "state.json")
        assert state.round == cfg_half.rounds
        final = f"round_{cfg_full.rounds}/model.mlp"
        assert (tmp_path / "full" / final).read_bytes() == (
            tmp_path / "half" / final
        ).read_bytes()

    def test_resume_mid_round_reuses_persisted_batch(self, data_dir, tmp_path):
        cfg_full = fast_config(data_dir, tmp_path / "full")
        run_loop(cfg_full)

        # Reproduce the crash window between batch collection and training:
        # round-1 queries answered and persisted, artifacts on disk, but
        # state.json still says round 0 and round_1 has no model yet.
        cfg_crash = fast_config(data_dir, tmp_path / "crash")
        engine = AnnotationLoop(cfg_crash)
        engine.warmup()
        engine.run_round(1)
        run = tmp_path / "crash"
        (run / "round_1" / "model.mlp").unlink()
        (run / "round_1" / "sieved.svd").unlink()
        doc = json.loads((run / "state.json").read_text())
        doc["round"] = 0
        (run / "state.json").write_text(json.dumps(doc))

        state = resume(run / "state.json")
        assert state.round == cfg_crash.rounds
        final = f"round_{cfg_crash.rounds}/model.mlp"
        assert (tmp_path / "full" / final).read_bytes() == (run / final).read_bytes()

    def test_resume_is_noop_when_done(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        run_loop(cfg)
        before = (tmp_path / "run" / "queries.json").read_bytes()
        state = resume(tmp_path / "run" / "state.json")
        assert state.round == cfg.rounds
        assert (tmp_path / "run" / "queries.json").read_bytes() == before

    def test_missing_probs_artifact_is_an_error(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        engine = AnnotationLoop(cfg)
        engine.warmup()
        engine.run_round(1)
        run = tmp_path / "run"
        (run / "round_1" / "model.mlp").unlink()
        (run / "round_1" / "probs_0000.ppf").unlink()
        doc = json.loads((run / "state.json").read_text())
        doc["round"] = 0
        (run / "state.json").write_text(json.dumps(doc))
        with pytest.raises(LoopError, match="missing probability map artifact"):
            resume(run / "state.json")

    def test_corrupted_state_file(self, tmp_path):
        bad = tmp_path / "state.json"
        bad.write_text("{this is not json")
        with pytest.raises(LoopError, match="corrupted state file"):
            load_engine(bad)

    def test_missing_model_artifact(self, data_dir, tmp_path):
        cfg = fast_config(data_dir, tmp_path / "run")
        run_loop(cfg)
        (tmp_path / "run" / f"round_{cfg.rounds}" / "model.mlp").unlink()
        with pytest.raises(LoopError, match="missing model artifact"):
            load_engine(tmp_path / "run" / "state.json")

    def test_status_requires_state(self, tmp_path):
        with pytest.raises(LoopError, match="no run state"):
            loop_status(tmp_path)


class TestIgnoredRegions:
    def test_all_ignore_region_skipped_and_replaced(self, data_dir, tmp_path):
        # copy the dataset and stamp one full base cell of image 0 to ignore
        root = tmp_path / "data"
        shutil.copytree(data_dir, root)
        entry_labels = root / "labels" / "train_000.png"
        lm = load_label_map(entry_labels, num_classes=4)
        data = np.array(lm.data)
        data[0:4, 0:4] = 255  # exactly the first grid cell at cell size 4
        save_label_map(
            LabelMap(width=32, height=32, data=data, ignore_id=255, num_classes=4),
            entry_labels,
        )
        engine = AnnotationLoop(
            fast_config(root, tmp_path / "run", budget=6 * 64, rounds=0)
        )
        engine.run()
        skipped = [q for q in engine.state.queries if q.status == STATUS_SKIPPED]
        assert len(skipped) == 1
        assert engine.state.clicks_spent == 6 * 64 - 1

    def test_missing_labels_need_explicit_broker(self, data_dir, tmp_path):
        root = tmp_path / "data"
        shutil.copytree(data_dir, root)
        shutil.rmtree(root / "labels")
        cfg = fast_config(root, tmp_path / "run", rounds=0, budget=4)
        with pytest.raises(LoopError, match="ground-truth"):
            AnnotationLoop(cfg)

        class ConstantBroker:
            def collect(self, records, refill, on_update=None):
                out = []
                for rec in records:
                    if rec.status == STATUS_PENDING:
                        rec.answer = rec.query_id % 2
                        rec.status = STATUS_ANSWERED
                        out.append(rec)
                return out

        engine = AnnotationLoop(cfg, broker=ConstantBroker())
        state = engine.run()
        assert state.round == 0 and state.clicks_spent == 4
