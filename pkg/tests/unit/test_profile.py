from fractions import Fraction

import pytest
import torch

from elastr import numerics as nx
from elastr.distill import MissingMetricError
from elastr.model import AdaptiveModel, collate, forward
from elastr.profile import (
    embedding_param_count,
    enumerate_grid,
    flops_count,
    layer_param_count,
    param_count,
    pareto,
    write_cost_csv,
)
from elastr.schemas import FULL_SPEC, ConfigurationError, ModelConfig, SubNetSpec


def spec(w, d=1.0):
    return SubNetSpec(width_mult=w, depth_mult=d)


@pytest.fixture
def toy_cfg():
    return ModelConfig(
        num_hidden_layers=1,
        hidden_size=4,
        num_attention_heads=2,
        intermediate_size=8,
        vocab_size=5,
        max_position_embeddings=4,
        num_classes=2,
        width_list=(1.0, 0.5),
        depth_list=(1.0,),
    )


class TestParamCount:
    def test_tiny_layer_counts(self, toy_cfg):
        assert layer_param_count(toy_cfg, 1.0) == 172
        assert layer_param_count(toy_cfg, 0.5) == 98
        assert Fraction(layer_param_count(toy_cfg, 0.5), layer_param_count(toy_cfg, 1.0)) == Fraction(98, 172)

    def test_full_spec_matches_enumeration(self, grid_cfg):
        model = AdaptiveModel(grid_cfg)
        total = sum(p.numel() for p in model.parameters())
        embeddings = sum(p.numel() for p in model.embeddings.parameters())
        assert param_count(grid_cfg, FULL_SPEC) == total - embeddings
        assert embedding_param_count(grid_cfg) == embeddings
        assert param_count(grid_cfg, FULL_SPEC, include_embeddings=True) == total

    def test_linear_in_kept_layers(self, grid_cfg):
        classifier = grid_cfg.hidden_size * grid_cfg.num_classes + grid_cfg.num_classes
        for w in grid_cfg.width_list:
            per_layer = layer_param_count(grid_cfg, w)
            for d, layers in ((1.0, 4), (0.75, 3), (0.5, 2)):
                assert param_count(grid_cfg, spec(w, d)) == layers * per_layer + classifier


class TestFlops:
    def test_toy_config(self, toy_cfg):
        assert flops_count(toy_cfg, FULL_SPEC, seq_len=2) == 592

    def test_half_width_halves_sliced_terms(self, grid_cfg):
        classifier = 2 * grid_cfg.hidden_size * grid_cfg.num_classes
        full = flops_count(grid_cfg, FULL_SPEC, seq_len=5)
        assert flops_count(grid_cfg, spec(0.5), seq_len=5) == (full - classifier) // 2 + classifier

    def test_half_depth_halves_layer_terms(self, grid_cfg):
        classifier = 2 * grid_cfg.hidden_size * grid_cfg.num_classes
        full = flops_count(grid_cfg, FULL_SPEC, seq_len=5)
        assert flops_count(grid_cfg, spec(1.0, 0.5), seq_len=5) == (full - classifier) // 2 + classifier

    @pytest.mark.parametrize("w,d", [(1.0, 1.0), (0.75, 0.75), (0.25, 0.5)])
    def test_matches_instrumented_forward(self, grid_cfg, mocker, w, d):
        macs = []
        original = nx.matmul

        def counting(a, b):
            out = original(a, b)
            macs.append(out.numel() * a.shape[-1])
            return out

        mocker.patch("elastr.numerics.matmul", side_effect=counting)
        n = grid_cfg.max_position_embeddings
        batch = collate([(0, tuple(i % grid_cfg.vocab_size for i in range(n)))])
        with torch.no_grad():
            forward(AdaptiveModel(grid_cfg), spec(w, d), batch)
        assert 2 * sum(macs) == flops_count(grid_cfg, spec(w, d), seq_len=n)

    def test_elementwise_variant_adds_work(self, toy_cfg):
        plain = flops_count(toy_cfg, FULL_SPEC, seq_len=2)
        assert flops_count(toy_cfg, FULL_SPEC, seq_len=2, include_elementwise=True) > plain

    def test_default_sequence_length_is_capped(self, toy_cfg):
        assert flops_count(toy_cfg, FULL_SPEC) == flops_count(toy_cfg, FULL_SPEC, seq_len=4)

    def test_sequence_too_long(self, toy_cfg):
        with pytest.raises(ConfigurationError):
            flops_count(toy_cfg, FULL_SPEC, seq_len=5)


class TestGrid:
    def test_grid_size_and_order(self, grid_cfg):
        report = enumerate_grid(grid_cfg)
        assert len(report) == 12
        assert report.rows[0].spec == FULL_SPEC
        assert report.rows[1].spec == spec(0.75)
        assert report.rows[4].spec == spec(1.0, 0.75)

    def test_costs_strictly_monotone(self, grid_cfg):
        rows = {row.spec: row for row in enumerate_grid(grid_cfg).rows}
        widths, depths = grid_cfg.width_list, grid_cfg.depth_list
        for d in depths:
            for wide, narrow in zip(widths, widths[1:]):
                assert rows[spec(narrow, d)].flops < rows[spec(wide, d)].flops
                assert rows[spec(narrow, d)].params_transformer < rows[spec(wide, d)].params_transformer
        for w in widths:
            for deep, shallow in zip(depths, depths[1:]):
                assert rows[spec(w, shallow)].flops < rows[spec(w, deep)].flops
                assert rows[spec(w, shallow)].params_total < rows[spec(w, deep)].params_total

    def test_pareto_drops_dominated_specs(self, tiny_cfg):
        report = enumerate_grid(tiny_cfg)
        accuracy = {spec(1.0): 0.9, spec(0.5): 0.95, spec(1.0, 0.5): 0.7, spec(0.5, 0.5): 0.6}
        frontier = [row.spec for row in pareto(report, accuracy)]
        # (1, 0.5) costs the same as (0.5, 1) but is less accurate
        assert frontier == [spec(0.5, 0.5), spec(0.5)]

    def test_pareto_single_spec(self, toy_cfg):
        report = enumerate_grid(toy_cfg, width_list=(1.0,))
        assert [row.spec for row in pareto(report, {FULL_SPEC: 0.5})] == [FULL_SPEC]

    def test_pareto_missing_accuracy(self, tiny_cfg):
        with pytest.raises(MissingMetricError):
            pareto(enumerate_grid(tiny_cfg), {FULL_SPEC: 1.0})

    def test_cost_csv(self, tiny_cfg, tmp_path):
        path = tmp_path / "costs.csv"
        report = enumerate_grid(tiny_cfg, seq_len=4)
        accuracy = {row.spec: 0.5 for row in report.rows}
        write_cost_csv(report, path, accuracy)
        lines = path.read_text().splitlines()
        assert lines[0] == "# 1 MAC = 2 FLOPs; seq_len=4"
        assert lines[1] == "spec,m_w,m_d,params_transformer,params_total,flops,accuracy"
        assert len(lines) == 2 + 4
        assert lines[2].startswith('"(1, 1)",1.0,1.0,')
        assert lines[2].endswith(",0.5")
