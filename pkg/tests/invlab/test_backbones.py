import pytest
import torch

from invlab.backbones import (
    ARCHITECTURES,
    BackboneError,
    BackboneSpec,
    build_backbone,
    parameter_count,
)


class TestBuildBackbone:
    @pytest.mark.parametrize("architecture", ARCHITECTURES)
    @pytest.mark.parametrize("shape", [(16, 16, 1), (32, 32, 3)])
    def test_it_outputs_one_logit_per_class(self, architecture, shape):
        model = build_backbone(architecture, 7, shape)
        h, w, c = shape
        out = model(torch.zeros(2, c, h, w))
        assert out.shape == (2, 7)

    def test_it_records_its_spec(self):
        model = build_backbone("resnet20", 10, (32, 32, 3))
        assert model.spec == BackboneSpec("resnet20", 10, (32, 32, 3))

    def test_deeper_resnets_have_more_parameters(self):
        shallow = build_backbone("resnet20", 10, (32, 32, 3))
        deep = build_backbone("resnet32", 10, (32, 32, 3))
        assert parameter_count(deep) > parameter_count(shallow)

    def test_resnet20_has_about_a_quarter_million_parameters(self):
        model = build_backbone("resnet20", 10, (32, 32, 3))
        assert 250_000 < parameter_count(model) < 300_000

    def test_it_handles_a_batch_of_one_in_eval_mode(self):
        model = build_backbone("simple_cnn", 3, (28, 28, 1)).eval()
        assert model(torch.zeros(1, 1, 28, 28)).shape == (1, 3)

    def test_unknown_architectures_are_rejected(self):
        with pytest.raises(BackboneError):
            build_backbone("vgg16", 10, (32, 32, 3))

    def test_simple_cnn_needs_16_pixels(self):
        with pytest.raises(BackboneError):
            build_backbone("simple_cnn", 10, (8, 8, 1))
