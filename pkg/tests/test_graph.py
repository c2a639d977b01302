import numpy as np
import pytest

from msdnet.errors import ConfigurationError
from msdnet.graph import (
    INPUT_ID,
    KIND_CLASSIFIER,
    KIND_CONCAT,
    KIND_SEED,
    KIND_TRANSITION,
    NetworkConfig,
    build,
    classifier_placement,
    config_hash,
)


def small_config(**overrides):
    base = dict(
        num_scales=2,
        num_layers=4,
        growth_rates=(2, 4),
        num_classes=2,
        input_shape=(1, 16, 16),
        classifier_placement=(2, 4),
        reduction=False,
        classifier_channels=8,
    )
    base.update(overrides)
    return NetworkConfig(**base)


# ---------------------------------------------------------------------------
# classifier placement
# ---------------------------------------------------------------------------


def test_anytime_placement_24_layers():
    assert classifier_placement("anytime", 24) == [4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24]


def test_anytime_placement_minimal():
    assert classifier_placement("anytime", 4) == [4]


def test_anytime_placement_too_shallow():
    with pytest.raises(ConfigurationError):
        classifier_placement("anytime", 3)


def test_budgeted_placement_triangular():
    assert classifier_placement("budgeted", 10) == [1, 3, 6, 10]


def test_budgeted_placement_forces_final_layer():
    assert classifier_placement("budgeted", 8) == [1, 3, 6, 8]


def test_budgeted_placement_with_count():
    assert classifier_placement("budgeted", 10, num_classifiers=3) == [1, 3, 6]


def test_anytime_cifar_configuration():
    # the standard image configuration: three scales, growth 6/12/24,
    # 24 layers, reduction, default 128-channel heads
    cfg = NetworkConfig(
        num_scales=3,
        num_layers=24,
        growth_rates=(6, 12, 24),
        num_classes=10,
        input_shape=(3, 32, 32),
        classifier_placement="anytime",
    )
    graph = build(cfg)
    assert graph.num_classifiers == 11
    assert [graph.nodes[c].layer for c in graph.classifier_ids] == list(range(4, 25, 2))
    assert graph.blocks == [(1, 8, 1), (9, 16, 2), (17, 24, 3)]
    heads = [graph.nodes[c] for c in graph.classifier_ids]
    assert all(n.params["conv1_w"].shape[0] == 128 for n in heads)
    # scale map sizes: 32/16/8 at scales 1/2/3
    assert {n.scale: n.out_hw for n in graph.nodes if n.kind == "seed-conv"} == {
        1: (32, 32), 2: (16, 16), 3: (8, 8)
    }


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def test_full_grid_has_one_output_position_per_layer_and_scale():
    cfg = small_config(
        num_scales=3, growth_rates=(2, 2, 4), num_layers=4, classifier_placement=(4,)
    )
    graph = build(cfg)
    assert sorted(graph.history_channels) == [
        (layer, scale) for layer in range(1, 5) for scale in range(1, 4)
    ]


def test_channel_bookkeeping_hand_example():
    graph = build(small_config())
    # seed 2*4 plus three growth steps of 4 at the coarsest scale
    assert graph.history_channels[(4, 2)] == 20


def test_channel_formula_on_random_configs():
    rng = np.random.default_rng(42)
    for _ in range(20):
        s = int(rng.integers(1, 4))
        layers = int(rng.integers(1, 6))
        growth = tuple(int(2 * rng.integers(1, 4)) for _ in range(s))
        seed_mult = int(rng.integers(1, 4))
        cfg = NetworkConfig(
            num_scales=s,
            num_layers=layers,
            growth_rates=growth,
            num_classes=2,
            input_shape=(1, 32, 32),
            seed_multiplier=seed_mult,
            classifier_placement=(layers,),
            reduction=False,
            classifier_channels=4,
        )
        graph = build(cfg, seed=int(rng.integers(0, 100)))
        for layer in range(1, layers + 1):
            for scale in range(1, s + 1):
                expect = seed_mult * growth[scale - 1] + (layer - 1) * growth[scale - 1]
                assert graph.history_channels[(layer, scale)] == expect


def test_reduction_blocks_keep_decreasing_scales():
    cfg = NetworkConfig(
        num_scales=3,
        num_layers=9,
        growth_rates=(2, 2, 4),
        num_classes=2,
        input_shape=(1, 32, 32),
        classifier_placement=(9,),
        reduction=True,
        classifier_channels=4,
    )
    graph = build(cfg)
    assert graph.blocks == [(1, 3, 1), (4, 6, 2), (7, 9, 3)]
    for first, last, finest in graph.blocks:
        scales = {
            n.scale
            for n in graph.nodes
            if first <= n.layer <= last and n.kind not in (KIND_CONCAT, KIND_CLASSIFIER)
            and not (n.kind == KIND_TRANSITION)
        }
        assert scales == set(range(finest, 4))


def test_reduction_remainder_goes_to_later_blocks():
    cfg = NetworkConfig(
        num_scales=3,
        num_layers=10,
        growth_rates=(2, 2, 2),
        num_classes=2,
        input_shape=(1, 32, 32),
        classifier_placement=(10,),
        reduction=True,
        classifier_channels=4,
    )
    assert build(cfg).blocks == [(1, 3, 1), (4, 6, 2), (7, 10, 3)]


def test_transition_halves_channels_exactly():
    cfg = NetworkConfig(
        num_scales=3,
        num_layers=9,
        growth_rates=(2, 4, 6),
        num_classes=2,
        input_shape=(1, 32, 32),
        classifier_placement=(9,),
        reduction=True,
        classifier_channels=4,
        seed_multiplier=3,
    )
    graph = build(cfg)
    transitions = [n for n in graph.nodes if n.kind == KIND_TRANSITION]
    assert transitions
    for n in transitions:
        assert n.out_channels == n.in_channels // 2


def test_densenet_star_doubles_growth_after_transitions():
    base = dict(
        num_scales=2,
        num_layers=6,
        growth_rates=(2, 4),
        num_classes=2,
        input_shape=(1, 16, 16),
        classifier_placement=(6,),
        reduction=True,
        classifier_channels=4,
    )
    plain = build(NetworkConfig(**base))
    star = build(NetworkConfig(**base, densenet_star=True))
    # block 2 covers layers 4..6 at scale 2; each layer adds k (plain) vs 2k (star)
    plain_step = plain.history_channels[(5, 2)] - plain.history_channels[(4, 2)]
    star_step = star.history_channels[(5, 2)] - star.history_channels[(4, 2)]
    assert plain_step == 4
    assert star_step == 8


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------


def test_dense_off_history_is_latest_output_only():
    graph = build(small_config(dense_connectivity=False))
    # history never grows: channels at the coarsest scale stay at one growth step
    assert graph.history_channels[(2, 2)] == 4
    assert graph.history_channels[(4, 2)] == 4


def test_multi_scale_off_forces_single_scale():
    graph = build(small_config(multi_scale=False, classifier_placement=(4,)))
    assert {n.scale for n in graph.nodes} == {1}


def test_intermediate_classifiers_off_keeps_final_only():
    graph = build(small_config(intermediate_classifiers=False))
    assert graph.num_classifiers == 1
    assert graph.nodes[graph.classifier_ids[0]].layer == 4


def test_all_ablations_give_linear_chain():
    cfg = small_config(
        num_scales=1,
        growth_rates=(4,),
        dense_connectivity=False,
        multi_scale=False,
        intermediate_classifiers=False,
        classifier_placement=(4,),
    )
    graph = build(cfg)
    kinds = [n.kind for n in graph.nodes]
    assert KIND_CONCAT not in kinds
    assert kinds[0] == KIND_SEED and kinds[-1] == KIND_CLASSIFIER
    # every node consumes exactly the previous node: a plain chain
    for i, n in enumerate(graph.nodes):
        assert n.inputs == ((INPUT_ID,) if i == 0 else (i - 1,))


# ---------------------------------------------------------------------------
# DAG invariants
# ---------------------------------------------------------------------------


def random_valid_config(rng):
    s = int(rng.integers(1, 4))
    reduction = bool(rng.integers(0, 2))
    layers = int(rng.integers(s if reduction else 1, 8))
    growth = tuple(int(2 * rng.integers(1, 4)) for _ in range(s))
    placement_layers = sorted(
        set(rng.choice(np.arange(1, layers + 1), size=min(2, layers), replace=False).tolist())
        | {layers}
    )
    return NetworkConfig(
        num_scales=s,
        num_layers=layers,
        growth_rates=growth,
        num_classes=int(rng.integers(2, 5)),
        input_shape=(1, 32, 32),
        seed_multiplier=int(rng.integers(1, 3)),
        classifier_placement=tuple(int(x) for x in placement_layers),
        reduction=reduction,
        densenet_star=bool(rng.integers(0, 2)),
        dense_connectivity=bool(rng.integers(0, 2)),
        classifier_channels=4,
    )


def test_random_graphs_are_topological_and_scale_monotone():
    rng = np.random.default_rng(0)
    for _ in range(25):
        graph = build(random_valid_config(rng), seed=1)
        for n in graph.nodes:
            for i in n.inputs:
                if i == INPUT_ID:
                    continue
                src = graph.nodes[i]
                assert src.node_id < n.node_id  # ids are a topological order
                assert n.layer >= src.layer
                assert n.scale - src.scale in (0, 1)  # at most one scale step
        # every classifier reaches the input
        for cid in graph.classifier_ids:
            anc = graph.ancestors(cid)
            assert any(INPUT_ID in graph.nodes[a].inputs for a in anc)
        assert graph.num_classifiers >= 1


def test_rebuild_same_seed_identical():
    cfg = small_config()
    g1, g2 = build(cfg, seed=5), build(cfg, seed=5)
    assert len(g1.nodes) == len(g2.nodes)
    for a, b in zip(g1.nodes, g2.nodes):
        assert (a.kind, a.scale, a.layer, a.inputs, a.out_channels) == (
            b.kind, b.scale, b.layer, b.inputs, b.out_channels
        )
        for key in a.params:
            assert np.array_equal(a.params[key].data, b.params[key].data)


def test_rebuild_different_seed_differs():
    cfg = small_config()
    g1, g2 = build(cfg, seed=5), build(cfg, seed=6)
    same = all(
        np.array_equal(a.params[k].data, b.params[k].data)
        for a, b in zip(g1.nodes, g2.nodes)
        for k in a.params
    )
    assert not same


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_odd_growth_rate_rejected():
    with pytest.raises(ConfigurationError):
        small_config(growth_rates=(3, 4)).validate()


def test_placement_must_include_final_layer():
    with pytest.raises(ConfigurationError):
        small_config(classifier_placement=(1, 3)).validate()


def test_from_dict_unknown_key():
    d = small_config().to_dict()
    d["growth_rate"] = [2, 4]
    with pytest.raises(ConfigurationError, match="growth_rate"):
        NetworkConfig.from_dict(d)


def test_from_dict_missing_field():
    d = small_config().to_dict()
    del d["growth_rates"]
    with pytest.raises(ConfigurationError, match="growth_rates"):
        NetworkConfig.from_dict(d)


def test_config_hash_stable_and_sensitive():
    a = small_config()
    assert config_hash(a) == config_hash(small_config())
    assert config_hash(a) != config_hash(small_config(num_layers=6))


def test_reduction_needs_enough_layers():
    with pytest.raises(ConfigurationError):
        NetworkConfig(
            num_scales=3,
            num_layers=2,
            growth_rates=(2, 2, 2),
            num_classes=2,
            input_shape=(1, 32, 32),
            reduction=True,
            classifier_placement=(2,),
        ).validate()
