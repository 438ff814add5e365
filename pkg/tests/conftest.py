import numpy as np
import pytest

from mmrec.fusion import ModalityFeatures
from mmrec.interest import ProfileVocab, StaticProfile
from mmrec.model import Model, ModelConfig, Variant
from mmrec.pipeline import VideoRecord

DIMS = (4, 3, 5)
VOCAB = ProfileVocab(("<unk>", "f", "m"), ("<unk>", "r00", "r01"), ("<unk>", "b0", "b1"))


def random_videos(rng, n, dims=DIMS, missing_audio=0.2):
    out = []
    width = len(str(n - 1))
    for i in range(n):
        audio = None if rng.random() < missing_audio else rng.normal(size=dims[2])
        feats = ModalityFeatures.from_optional(rng.normal(size=dims[0]), rng.normal(size=dims[1]), audio, d_a=dims[2])
        out.append(VideoRecord(f"v{i:0{width}d}", feats))
    return out


def random_model(seed, d=8, variant=Variant.FULL, scale=1.0):
    cfg = ModelConfig(d=d, d_v=DIMS[0], d_t=DIMS[1], d_a=DIMS[2], vocab=VOCAB, variant=variant)
    m = Model.init(cfg, seed)
    if scale != 1.0:
        m.params = {k: v * scale for k, v in m.params.items()}
    return m


@pytest.fixture
def profile():
    return StaticProfile("f", "r01", "b1")


def full_loss_gradient_check(seed, variant=Variant.FULL, d=8, eps=1e-5):
    """Central differences of the composed training loss over every
    trainable parameter, on a hand-sized batch with padding, an empty
    history and a missing audio track."""
    from mmrec.model import Batch, Features
    from mmrec.numerics import gradient_check

    rng = np.random.default_rng(seed)
    m = random_model(seed, d=d, variant=variant)
    n = 6
    present = np.ones((n, 3), dtype=bool)
    present[2, 2] = False
    feats = Features(rng.normal(size=(n, DIMS[0])), rng.normal(size=(n, DIMS[1])),
                     rng.normal(size=(n, DIMS[2])) * present[:, 2:3], present)
    batch = Batch(
        hist=np.array([[0, 1, 2], [3, 0, 0], [0, 0, 0]]),
        hist_mask=np.array([[1, 1, 1], [1, 0, 0], [0, 0, 0]], dtype=bool),
        profile=np.array([[1, 2, 1], [2, 0, 0], [1, 1, 2]]),
        targets=np.array([[4, 5], [2, 1], [5, 3]]),
        target_mask=np.array([[1, 1], [1, 0], [1, 1]], dtype=bool),
        labels=np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
    )
    names = m.trainable()
    _, g = m.loss_and_grad(feats, batch)
    analytic = np.concatenate([g[k].ravel() for k in names])

    probe = m.copy()

    def loss(vec):
        probe.set_vector(vec, names)
        return probe.loss(feats, batch)

    return gradient_check(loss, m.to_vector(names), analytic, eps)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[1:s.index("]")])):
            terminalreporter.write_line(line)
