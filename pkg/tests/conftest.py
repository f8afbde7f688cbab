import random

import numpy as np
import pytest

from flag.embeddings import PseudoEmbeddings
from flag.graph import attach_features, build_document_graph
from flag.model import Model, ModelConfig
from flag.penman import generate_random_amr

# The two "our" tokens collapse into one
# "we" node that invest-01 takes as :ARG0 and that stock and business possess.
INVESTMENT_PENMAN = """\
# ::tok an investment in our common stock is subject to risks inherent to our business
# ::alignments s-7-8 i-1-2 w-3-4 s2-5-6 c-4-5 r-9-10 i2-10-11 b-13-14
(s / subject-01
   :ARG1 (i / invest-01
      :ARG0 (w / we)
      :ARG1 (s2 / stock
         :mod (c / common)
         :poss w))
   :ARG2 (r / risk-01
      :ARG1 i
      :mod (i2 / inherent-01
         :ARG2 (b / business
            :poss w))))
"""

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def random_document(seed, m_range=(1, 4), n_range=(1, 6), reentrancy=0.2):
    rng = random.Random(seed)
    m = rng.randint(*m_range)
    return [generate_random_amr(rng.randrange(1 << 30), rng.randint(*n_range), reentrancy, sentence_index=j)
            for j in range(m)]


def featured_graph(seed, dim=8, **kw):
    sentences = random_document(seed, **kw)
    graph = build_document_graph(f"doc{seed}", sentences)
    return attach_features(graph, PseudoEmbeddings(dim, seed), sentences)


def small_model(kind="gatv2", seed=0, dtype="float64", dim=8, hidden=16, heads=2, layers=2, bias_scale=0.1):
    model = Model(ModelConfig(n_layers=layers, n_heads=heads, hidden_dim=hidden, input_dim=dim,
                              layer_kind=kind, seed=seed, dtype=dtype))
    # nonzero biases so every parameter path is exercised
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.params.items():
        if p.ndim == 1:
            p[...] = rng.normal(0, bias_scale, p.shape)
    return model


@pytest.fixture
def investment_text():
    return INVESTMENT_PENMAN
