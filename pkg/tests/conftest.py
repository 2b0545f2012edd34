import numpy as np
import pytest

from relfill import backend
from relfill.data import Instance, RelationSchema, SyntheticConfig, generate_synthetic
from relfill.model import ModelConfig
from relfill.templates import TemplateConfig, VerbalizerMode
from relfill.training import OptimConfig, TrainConfig, train
from relfill.vocab import build_vocab


@pytest.fixture(params=backend.available_backends())
def any_backend(request):
    """Run a test once per available kernel backend."""
    prev = backend.backend_name()
    backend.set_backend(request.param)
    yield request.param
    backend.set_backend(prev)


@pytest.fixture(scope="session")
def tiny_corpus():
    instances, schema = generate_synthetic(
        SyntheticConfig(num_relations=4, instances_per_relation=8, vocab_size=24), seed=13
    )
    return instances, schema


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    instances, schema = tiny_corpus
    return build_vocab(instances, schema)


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(d=16, layers=1, heads=4, ffn=24, max_positions=64)


@pytest.fixture(scope="session")
def trained_tiny(tiny_corpus, tiny_vocab, tiny_model_cfg):
    """A briefly trained model shared by scoring tests (scores must be non-degenerate)."""
    instances, schema = tiny_corpus
    template_cfg = TemplateConfig()
    params, _ = train(
        instances,
        None,
        schema,
        tiny_vocab,
        template_cfg,
        tiny_model_cfg,
        OptimConfig(lr_model=1e-3, lr_prompt=1e-3),
        TrainConfig(epochs=3, batch_size=8),
        VerbalizerMode.FULL,
        seed=13,
    )
    return params, template_cfg


def make_instance(tokens, head, tail, head_type="ORG", tail_type="PER", relation="org:members"):
    return Instance(
        tokens=tuple(tokens),
        head_span=head,
        tail_span=tail,
        head_type=head_type,
        tail_type=tail_type,
        relation=relation,
        uid="t0",
    )


def tacred_like_schema():
    return RelationSchema.from_labels(
        ["org:top_members/employees", "per:employee_of", "org:members", "no_relation"],
        negative_label="no_relation",
    )


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(7))
