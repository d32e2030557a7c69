"""Tests for the differentiable time-scoring model and its training loop."""

import io
import math
from collections import Counter

import numpy as np
import pytest
import torch

from chronomine.density import EraPolicy, eval_component
from chronomine.eventgraph import build_event_graph
from chronomine.learner import (
    MODE_EVENT,
    MODE_RULE,
    ControllerAttention,
    DirectAttention,
    Grids,
    LocalOps,
    MixingWeights,
    PreparedQuery,
    TimeScoringModel,
    TrainConfig,
    active_targets,
    artifact_from_training,
    build_grids,
    finite_difference_check,
    load_model,
    pattern_score,
    prepare_query,
    save_model,
    select_training_queries,
    train,
    walk_forward,
)
from chronomine.mining import MinerConfig, RulePattern, pattern_hash, query_from_event
from chronomine.pipeline import fit_densities
from chronomine.synth import PlantSpec, generate_planted_tkg
from chronomine.tkg import (
    RELATIONS,
    SCHEMA_INTERVAL,
    SCHEMA_TIMESTAMP,
    TemporalRelation,
    add_inverse_facts,
    parse_quadruple_file,
    quantize,
)

ERA = EraPolicy.for_granularity("year")
ANY_IDX = RELATIONS.index(TemporalRelation.ANY)
OVERLAP_IDX = RELATIONS.index(TemporalRelation.OVERLAP)

# Two enrolments at the same university plus one job move: six events after
# inverse augmentation, and exactly one grounding of the three-hop pattern
# below around the first enrolment.
CAMPUS_ROWS = [
    "alice\tstudied_at\tcoastal_university\t2018\t2021",
    "nadia\tstudied_at\tcoastal_university\t2020\t2023",
    "alice\tworked_in\tport_city\t2021\t2023",
]


def campus_graph():
    return build_event_graph(
        add_inverse_facts(parse_quadruple_file(CAMPUS_ROWS, "interval", "year"))
    )


def campus_pattern(g):
    pid = g.tkg.predicates
    return RulePattern(
        head=pid.id("studied_at"),
        body=(pid.id("studied_at^-1"), pid.id("studied_at"), pid.id("studied_at^-1")),
        relations=(TemporalRelation.OVERLAP, TemporalRelation.OVERLAP),
    )


def campus_prepared(patterns=None):
    """Graph, pattern, densities, grids, and the first fact prepared as a query."""
    g = campus_graph()
    pattern = campus_pattern(g)
    cfg = MinerConfig(max_length=3)
    table = fit_densities(g, [pattern], cfg, ("s", "e"), self_mask=False)
    grids = build_grids(g.tkg)
    chosen = [pattern] if patterns is None else patterns
    prepared = prepare_query(
        g,
        query_from_event(g, 0),
        chosen,
        table,
        grids,
        cfg,
        ("s", "e"),
        ERA,
        truth=g.tkg.facts[0].when,
    )
    return g, pattern, table, grids, prepared


def planted_graph(n, seed):
    """Noise-free chain dataset plus the one-hop pattern that explains it."""
    spec = PlantSpec(n_entities=n, noise_rate=0.0, seed=seed, holdout_fraction=0.0)
    g = build_event_graph(generate_planted_tkg(spec).build_tkg())
    pid = g.tkg.predicates
    pattern = RulePattern(head=pid.id("resolves"), body=(pid.id("triggers"),), relations=())
    return g, [pattern]


def _random_ops(rng, n, num_predicates):
    strict = rng.random((3, n, n)) < 0.3
    rel = np.zeros((len(RELATIONS), n, n))
    k = 0
    for idx, tr in enumerate(RELATIONS):
        if tr is TemporalRelation.ANY:
            rel[idx] = strict.any(axis=0)
        else:
            rel[idx] = strict[k]
            k += 1
    preds = rng.integers(0, num_predicates, size=n)
    return rel, preds


def _ops_from_arrays(rel, preds):
    rel_t = torch.from_numpy(rel.astype(np.float64))
    return LocalOps(
        any=rel_t[ANY_IDX],
        relations=rel_t,
        predicate_ids=torch.from_numpy(preds.astype(np.int64)),
        num_events=rel.shape[1],
    )


def _random_attention(seed, num_predicates, max_length, head):
    torch.manual_seed(seed)
    net = DirectAttention(num_predicates, max_length)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn_like(p))
    return net(head)


class TestAttentionNets:
    def test_direct_attention_shapes_and_normalization(self):
        net = DirectAttention(num_predicates=6, max_length=3)
        with torch.no_grad():
            torch.manual_seed(1)
            for p in net.parameters():
                p.copy_(torch.randn_like(p))
        state = net(2)
        assert len(state.alphas) == 2 and len(state.betas) == 2
        assert [len(gm) for gm in state.gammas] == [2, 3]
        assert len(state.gamma_final) == 4
        state.validate(tol=1e-9)

    def test_controller_attention_shapes_and_normalization(self):
        torch.manual_seed(3)
        net = ControllerAttention(6, 3, hidden_dim=8, embed_dim=4)
        state = net(1)
        assert len(state.alphas) == 2 and len(state.betas) == 2
        assert [len(gm) for gm in state.gammas] == [2, 3]
        assert len(state.gamma_final) == 4
        state.validate(tol=1e-9)

    def test_controller_first_history_weight_is_trivial(self):
        torch.manual_seed(0)
        net = ControllerAttention(4, 2, hidden_dim=6, embed_dim=3)
        h0 = torch.zeros(6, dtype=torch.float64)
        _, _, _, _, gamma = net.step(h0, h0, [h0], net.embeddings[1])
        assert gamma.shape == (1,)
        assert float(gamma.detach()[0]) == pytest.approx(1.0, abs=1e-12)

    def test_controller_zero_projection_gives_uniform_relations(self):
        torch.manual_seed(0)
        net = ControllerAttention(4, 3, hidden_dim=6, embed_dim=3)
        with torch.no_grad():
            net.relation_proj.weight.zero_()
            net.relation_proj.bias.zero_()
        state = net(0)
        for alpha in state.alphas:
            np.testing.assert_allclose(alpha.detach().numpy(), 0.25, atol=1e-12)

    def test_controller_step_requires_history(self):
        net = ControllerAttention(3, 2, hidden_dim=4, embed_dim=2)
        h0 = torch.zeros(4, dtype=torch.float64)
        with pytest.raises(ValueError):
            net.step(h0, h0, [], net.embeddings[0])

    def test_mixing_weights_initialize_balanced(self):
        mixing = MixingWeights(num_predicates=3, max_length=3)
        assert float(mixing.orientation_weight(1, 0).detach()) == pytest.approx(0.5)
        np.testing.assert_allclose(
            mixing.position_weights(2, 1).detach().numpy(), [0.5, 0.5]
        )
        assert float(mixing.endpoint_weight(0, 2, 3).detach()) == pytest.approx(0.5)


class TestWalkForward:
    def test_isolated_start_sends_no_mass(self):
        n = 4
        rel = torch.zeros((len(RELATIONS), n, n), dtype=torch.float64)
        ops = LocalOps(
            any=rel[ANY_IDX],
            relations=rel,
            predicate_ids=torch.zeros(n, dtype=torch.int64),
            num_events=n,
        )
        states = walk_forward(ops, 1, DirectAttention(2, 3)(0), 3)
        for u in states[1:4]:
            np.testing.assert_allclose(u.detach().numpy(), 0.0)
        expected = np.zeros(n)
        expected[1] = 0.25  # uniform readout keeps only the start state's mass
        np.testing.assert_allclose(states[-1].detach().numpy(), expected)

    def test_campus_walk_isolates_the_answer_only_after_closure(self):
        g, _, _, _, prepared = campus_prepared()
        pid = g.tkg.predicates
        head = pid.id("studied_at")
        net = DirectAttention(num_predicates=len(pid), max_length=3)
        big = 40.0
        with torch.no_grad():
            net.alpha_logits[head, :, OVERLAP_IDX] = big
            net.beta_logits[head, 0, pid.id("studied_at^-1")] = big
            net.beta_logits[head, 1, pid.id("studied_at")] = big
            net.gamma_logits[head, 0, 1] = big
            net.gamma_logits[head, 1, 2] = big
            net.gamma_final_logits[head, 3] = big
        states = walk_forward(
            prepared.ops, prepared.local.query_local, net(head), 3
        )
        twin = prepared.local.id_map[3]  # inverse twin of the queried fact
        other = prepared.local.id_map[4]  # inverse twin of the second enrolment
        u1 = states[1].detach().numpy()
        assert set(np.flatnonzero(u1)) == {twin, other}
        # Walk mass alone cannot isolate the answer: the second enrolment
        # shares the predicate and overlaps everything, so it soaks up an
        # equal share of the three-hop mass.
        u3 = states[3].detach().numpy()
        assert u3[twin] == pytest.approx(2.0, abs=1e-6)
        assert u3[other] == pytest.approx(2.0, abs=1e-6)
        # The cycle-closing edge exists only back at the queried entity, so
        # masking by it leaves mass solely on the twin.
        closed = (prepared.orientations[0].closure * states[-1]).detach().numpy()
        assert closed[twin] == pytest.approx(2.0, abs=1e-6)
        closed[twin] = 0.0
        np.testing.assert_allclose(closed, 0.0, atol=1e-9)

    def test_states_stay_nonnegative_under_random_attention(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            rel, preds = _random_ops(rng, 7, 3)
            attn = _random_attention(seed, 3, 3, head=1)
            for u in walk_forward(_ops_from_arrays(rel, preds), 2, attn, 3):
                arr = u.detach().numpy()
                assert np.all(arr >= -1e-12)
                assert np.all(np.isfinite(arr))

    def test_event_relabeling_permutes_states(self):
        rng = np.random.default_rng(4)
        rel, preds = _random_ops(rng, 6, 3)
        perm = rng.permutation(6)
        start = 2
        attn = _random_attention(11, 3, 3, head=0)
        base = walk_forward(_ops_from_arrays(rel, preds), start, attn, 3)
        moved = walk_forward(
            _ops_from_arrays(rel[:, perm][:, :, perm], preds[perm]),
            int(np.where(perm == start)[0][0]),
            attn,
            3,
        )
        for u, v in zip(base, moved):
            np.testing.assert_allclose(
                v.detach().numpy(), u.detach().numpy()[perm], atol=1e-12
            )


class TestEventSplit:
    def test_single_grounding_score_is_routed_density_mass(self):
        g, pattern, table, grids, prepared = campus_prepared()
        model = TimeScoringModel(num_predicates=len(g.tkg.predicates), max_length=3)
        h = pattern_hash(pattern, g.tkg.predicates)
        twin = prepared.local.id_map[3]
        anchor = g.interval(3)
        era = ERA.bucket(anchor.start)
        ts = grids.time.points.astype(np.float64)
        states = walk_forward(
            prepared.ops,
            prepared.local.query_local,
            model.attention(prepared.orientations[0].head),
            3,
        )
        mass = float(states[-1].detach()[twin])
        for b in ("s", "e"):
            f_s = table.lookup(h, "studied_at", b, 3, "s", era)
            f_e = table.lookup(h, "studied_at", b, 3, "e", era)
            row = 0.5 * np.asarray(eval_component(f_s, ts - anchor.start)) + (
                0.5 * np.asarray(eval_component(f_e, ts - anchor.end))
            )
            # orientation weight 0.5, endpoint weight 0.5, one satisfied pattern
            np.testing.assert_allclose(
                model.score(prepared, b).detach().numpy(),
                0.5 * mass * row,
                rtol=1e-12,
            )

    def test_orientation_weight_rescales_one_sided_scores(self):
        g, _, _, _, prepared = campus_prepared()
        k = len(g.tkg.predicates)
        base = TimeScoringModel(k, 3).score(prepared, "s").detach().numpy()
        confident = TimeScoringModel(k, 3)
        with torch.no_grad():
            confident.mixing.orientation_logits[prepared.predicate, 0] = 40.0
        doubled = confident.score(prepared, "s").detach().numpy()
        np.testing.assert_allclose(doubled, 2.0 * base, rtol=1e-6)

    def test_no_groundings_fall_back_to_uniform_probabilities(self):
        g, _, _, grids, prepared = campus_prepared(patterns=[])
        model = TimeScoringModel(len(g.tkg.predicates), 3)
        pr = model.probabilities(prepared, "s", grids.time.count).detach().numpy()
        np.testing.assert_allclose(pr, 1.0 / grids.time.count)
        loss = model.query_loss(prepared, grids, ("s", "e"))
        assert float(loss) == pytest.approx(2 * math.log(grids.time.count), rel=1e-9)


class TestRuleSplit:
    def test_score_is_pattern_weight_times_anchored_densities(self):
        g, _, _, _, prepared = campus_prepared()
        model = TimeScoringModel(len(g.tkg.predicates), 3, mode=MODE_RULE)
        blocks = prepared.rule_blocks["s"]
        assert len(blocks) == 1
        block = blocks[0]
        attn = model.attention(prepared.orientations[0].head)
        weight = pattern_score(attn, block)
        # uniform attention: readout picks length 3 with 1/4, each step keeps
        # its own previous state (1/2 then 1/3) and picks one of four
        # predicates and one of four relations
        assert float(weight.detach()) == pytest.approx(
            0.25 * (0.5 * 0.25 * 0.25) * ((1 / 3) * 0.25 * 0.25)
        )
        g_first = 0.5 * block.first_start + 0.5 * block.first_end
        g_last = 0.5 * block.last_start + 0.5 * block.last_end
        expected = (weight * (0.5 * g_first + 0.5 * g_last)).detach().numpy()
        np.testing.assert_allclose(
            model.score(prepared, "s").detach().numpy(), expected, rtol=1e-12
        )

    def test_block_constants_come_from_the_grounded_anchors(self):
        g, pattern, table, grids, prepared = campus_prepared()
        h = pattern_hash(pattern, g.tkg.predicates)
        ts = grids.time.points.astype(np.float64)
        block = prepared.rule_blocks["s"][0]
        first, last = g.interval(4), g.interval(3)
        np.testing.assert_allclose(
            block.first_start.numpy(),
            eval_component(
                table.lookup(h, "studied_at", "s", 1, "s", ERA.bucket(first.start)),
                ts - first.start,
            ),
        )
        np.testing.assert_allclose(
            block.last_end.numpy(),
            eval_component(
                table.lookup(h, "studied_at", "s", 3, "e", ERA.bucket(last.start)),
                ts - last.end,
            ),
        )

    def test_position_weights_collapse_to_the_first_anchor(self):
        g, _, _, _, prepared = campus_prepared()
        model = TimeScoringModel(len(g.tkg.predicates), 3, mode=MODE_RULE)
        with torch.no_grad():
            model.mixing.position_logits[prepared.predicate, 0, 0] = 40.0
            model.mixing.position_logits[prepared.predicate, 0, 1] = -40.0
        block = prepared.rule_blocks["s"][0]
        attn = model.attention(prepared.orientations[0].head)
        weight = pattern_score(attn, block)
        expected = (
            weight * (0.5 * block.first_start + 0.5 * block.first_end)
        ).detach().numpy()
        np.testing.assert_allclose(
            model.score(prepared, "s").detach().numpy(), expected, rtol=1e-6
        )

    def test_no_blocks_fall_back_to_uniform_probabilities(self):
        g, _, _, grids, prepared = campus_prepared(patterns=[])
        model = TimeScoringModel(len(g.tkg.predicates), 3, mode=MODE_RULE)
        pr = model.probabilities(prepared, "s", grids.time.count).detach().numpy()
        np.testing.assert_allclose(pr, 1.0 / grids.time.count)


class _FixedScoreModel(TimeScoringModel):
    """Scores replaced by canned vectors so the loss math is isolated."""

    def __init__(self, vectors):
        super().__init__(num_predicates=1, max_length=2)
        self._vectors = vectors

    def score(self, prepared, b, monitor=None):
        return self._vectors[b]


def _stub_prepared(truth_idx):
    return PreparedQuery(
        predicate=0,
        ops=None,
        orientations=(None, None),
        rule_blocks={},
        truth_idx=truth_idx,
        local=None,
    )


_GRIDS10 = Grids(time=quantize(0, 9, 1), duration=quantize(0, 9, 1))


class TestLossMath:
    def test_exact_hit_costs_nothing(self):
        vec = torch.zeros(10, dtype=torch.float64)
        vec[4] = 1.0
        model = _FixedScoreModel({"s": vec})
        loss = model.query_loss(_stub_prepared({"s": 4}), _GRIDS10, ("s",))
        assert float(loss) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_scores_cost_log_grid_size(self):
        vec = torch.full((10,), 0.3, dtype=torch.float64)
        model = _FixedScoreModel({"s": vec})
        loss = model.query_loss(_stub_prepared({"s": 7}), _GRIDS10, ("s",))
        assert float(loss) == pytest.approx(math.log(10.0), rel=1e-12)

    def test_zero_scores_fall_back_to_uniform(self):
        model = _FixedScoreModel(
            {
                "s": torch.zeros(0, dtype=torch.float64),
                "e": torch.zeros(10, dtype=torch.float64),
            }
        )
        loss = model.query_loss(_stub_prepared({"s": 2, "e": 9}), _GRIDS10, ("s", "e"))
        assert float(loss) == pytest.approx(2 * math.log(10.0), rel=1e-12)

    def test_confident_miss_is_expensive(self):
        vec = torch.zeros(10, dtype=torch.float64)
        vec[2] = 1.0
        model = _FixedScoreModel({"s": vec})
        loss = model.query_loss(_stub_prepared({"s": 7}), _GRIDS10, ("s",))
        assert float(loss) == pytest.approx(-math.log(1e-8 / (1 + 10e-8)), rel=1e-9)

    def test_unknown_truths_contribute_nothing(self):
        model = _FixedScoreModel({"s": torch.ones(10, dtype=torch.float64)})
        loss = model.query_loss(_stub_prepared({}), _GRIDS10, ("s",))
        assert float(loss) == 0.0


class TestGradientAgreement:
    def test_event_mode_with_direct_parameterization(self):
        g, _, _, grids, prepared = campus_prepared()
        model = TimeScoringModel(len(g.tkg.predicates), 3, mode=MODE_EVENT)
        torch.manual_seed(5)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(0.3 * torch.randn_like(p))
        worst = finite_difference_check(
            model, lambda: model.query_loss(prepared, grids, ("s", "e"))
        )
        assert worst <= 1e-4

    def test_rule_mode_with_recurrent_controller(self):
        g, _, _, grids, prepared = campus_prepared()
        torch.manual_seed(6)
        model = TimeScoringModel(
            len(g.tkg.predicates), 3, mode=MODE_RULE, controller=True,
            hidden_dim=6, embed_dim=3,
        )
        with torch.no_grad():
            for p in model.mixing.parameters():
                p.copy_(0.3 * torch.randn_like(p))
        worst = finite_difference_check(
            model, lambda: model.query_loss(prepared, grids, ("s", "e"))
        )
        assert worst <= 1e-4


class TestTraining:
    def test_validation_loss_strictly_decreases(self):
        g, patterns = planted_graph(36, seed=7)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        cfg = TrainConfig(
            learning_rate=0.05, epochs=5, batch_size=8, validation_fraction=0.25
        )
        result = train(g, patterns, table, cfg_m, cfg, seed=1)
        vals = [val for _, val in result.history]
        assert len(vals) == 5
        assert all(later < earlier for earlier, later in zip(vals, vals[1:]))

    def test_zero_learning_rate_leaves_parameters_untouched(self):
        g, patterns = planted_graph(24, seed=3)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        cfg = TrainConfig(
            learning_rate=0.0, epochs=2, batch_size=8, controller=True,
            hidden_dim=8, embed_dim=4,
        )
        result = train(g, patterns, table, cfg_m, cfg, seed=5)
        torch.manual_seed(5)
        fresh = TimeScoringModel(
            num_predicates=len(g.tkg.predicates), max_length=3, mode=MODE_EVENT,
            controller=True, hidden_dim=8, embed_dim=4,
        )
        for key, tensor in fresh.state_dict().items():
            assert torch.equal(result.final_state[key], tensor)

    def test_same_seed_reproduces_training_exactly(self):
        g, patterns = planted_graph(24, seed=3)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        cfg = TrainConfig(learning_rate=0.05, epochs=2, batch_size=8)
        first = train(g, patterns, table, cfg_m, cfg, seed=9)
        second = train(g, patterns, table, cfg_m, cfg, seed=9)
        assert first.history == second.history
        for key, tensor in first.final_state.items():
            assert torch.equal(second.final_state[key], tensor)

    def test_training_requires_groundable_queries(self):
        g, patterns = planted_graph(12, seed=2)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        with pytest.raises(ValueError, match="no trainable queries"):
            train(g, [], table, cfg_m, TrainConfig(epochs=1), seed=0)

    def test_monitor_observes_normalized_distributions(self):
        g, patterns = planted_graph(24, seed=3)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        seen = {"attention": [], "probability": []}
        cfg = TrainConfig(learning_rate=0.05, epochs=1, batch_size=8)
        train(
            g, patterns, table, cfg_m, cfg, seed=2,
            monitor=lambda kind, vec: seen.setdefault(kind, []).append(vec),
        )
        assert seen["attention"] and seen["probability"]
        for vec in seen["attention"]:
            assert abs(vec.sum() - 1.0) <= 1e-6
            assert vec.min() >= 0
        for vec in seen["probability"]:
            assert abs(vec.sum() - 1.0) <= 1e-9
            assert vec.min() >= 0

    def test_split_modes_agree_on_the_planted_answer(self):
        g, patterns = planted_graph(24, seed=11)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        grids = build_grids(g.tkg)
        fact = next(
            f
            for f in g.tkg.facts[: g.num_base]
            if g.tkg.predicates.name(f.predicate) == "resolves"
        )
        view = query_from_event(g, fact.id)
        prepared = prepare_query(
            g, view, patterns, table, grids, cfg_m, ("s", "e"), ERA,
            truth=fact.when,
            excluded_body=frozenset({view.event_id, view.mirror_event_id}),
        )
        k = len(g.tkg.predicates)
        event_pr = TimeScoringModel(k, 3, mode=MODE_EVENT).probabilities(
            prepared, "s", grids.time.count
        )
        rule_pr = TimeScoringModel(k, 3, mode=MODE_RULE).probabilities(
            prepared, "s", grids.time.count
        )
        assert int(event_pr.argmax()) == int(rule_pr.argmax())
        peak = grids.time.value(int(event_pr.argmax()))
        assert abs(peak - fact.when.start) <= 4

    def test_select_training_queries_caps_per_predicate(self):
        g, _ = planted_graph(30, seed=1)
        chosen = select_training_queries(
            g, ("s", "e"), cap=5, rng=np.random.default_rng(0)
        )
        assert all(fact_id < g.num_base for fact_id in chosen)
        counts = Counter(g.tkg.facts[i].predicate for i in chosen)
        assert sorted(counts.values()) == [5, 5]


class TestModelArtifact:
    def test_round_trip_preserves_scores(self):
        g, patterns = planted_graph(24, seed=3)
        cfg_m = MinerConfig(max_length=3)
        table = fit_densities(g, patterns, cfg_m, ("s", "e"))
        cfg = TrainConfig(learning_rate=0.05, epochs=1, batch_size=8)
        result = train(g, patterns, table, cfg_m, cfg, seed=4)
        fallback = {"resolves": (1912, 2), "triggers": (1905, 3)}
        artifact = artifact_from_training(
            result, g.tkg, fallback, meta={"rules_digest": "ab12"}
        )
        buf = io.StringIO()
        save_model(artifact, buf)
        buf.seek(0)
        loaded = load_model(buf)
        assert loaded.mode == artifact.mode
        assert loaded.controller == artifact.controller
        assert loaded.predicate_names == artifact.predicate_names
        assert loaded.fallback == fallback
        assert loaded.targets == artifact.targets
        assert loaded.meta["rules_digest"] == "ab12"
        for grid, reference in (
            (loaded.grids.time, artifact.grids.time),
            (loaded.grids.duration, artifact.grids.duration),
        ):
            assert (grid.start, grid.step, grid.count) == (
                reference.start, reference.step, reference.count,
            )
        for key, tensor in artifact.state.items():
            assert torch.equal(loaded.state[key], tensor)
        fact = next(
            f
            for f in g.tkg.facts[: g.num_base]
            if g.tkg.predicates.name(f.predicate) == "resolves"
        )
        prepared = prepare_query(
            g, query_from_event(g, fact.id), patterns, table, result.grids,
            cfg_m, ("s", "e"), ERA, truth=fact.when,
        )
        original = result.load_best().score(prepared, "s").detach().numpy()
        rebuilt = loaded.build_model().score(prepared, "s").detach().numpy()
        np.testing.assert_array_equal(original, rebuilt)

    def test_missing_version_header_is_rejected(self):
        with pytest.raises(ValueError, match="version"):
            load_model(io.StringIO("param\tx\t1\t0.0\n"))


class TestTargetSchedule:
    def test_targets_follow_schema_and_duration_flag(self):
        assert active_targets(SCHEMA_TIMESTAMP, False) == ("s",)
        assert active_targets(SCHEMA_INTERVAL, False) == ("s", "e")
        assert active_targets(SCHEMA_INTERVAL, True) == ("s", "d")

    def test_grids_cover_observed_times_and_durations(self):
        grids = build_grids(campus_graph().tkg)
        assert grids.time.points.tolist() == [2018, 2019, 2020, 2021, 2022, 2023]
        assert grids.duration.points.tolist() == [0, 1, 2, 3, 4, 5]

    def test_grids_require_known_times(self):
        tkg = parse_quadruple_file(["a\tp\tb\t####\t####"], "interval", "year")
        with pytest.raises(ValueError):
            build_grids(tkg)
