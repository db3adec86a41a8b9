import numpy as np
import pytest

from vrfer.data import SynthConfig, generate_synthetic, pair_multimodal

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def easy_data():
    return generate_synthetic(SynthConfig(per_class_train=50, per_class_val=20, per_class_test=20,
                                          sigma=0.05, mode="easy", seed=0))


@pytest.fixture(scope="session")
def small_easy():
    bundle, obs = generate_synthetic(SynthConfig(per_class_train=8, per_class_val=4, per_class_test=4,
                                                 sigma=0.0, mode="easy", seed=3))
    return bundle, obs, pair_multimodal(bundle, obs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# anger, disgust and neutral counts are the published ones; the other four
# classes are filled so the train split totals 964
PUBLISHED_TRAIN_COUNTS = (66, 102, 150, 150, 197, 150, 149)
PUBLISHED_VAL_PER_CLASS = 55
PUBLISHED_TEST_PER_CLASS = 54


@pytest.fixture(scope="session")
def published_shaped():
    """1,727-sample bundle with the published split sizes plus one-hot image observations."""
    from vrfer.data import DatasetBundle, ImageObservation, LabeledSample, VIEWS

    fea = np.full(63, 0.5)
    samples, obs = [], []
    plan = [("train", c, n) for c, n in enumerate(PUBLISHED_TRAIN_COUNTS)]
    plan += [("val", c, PUBLISHED_VAL_PER_CLASS) for c in range(7)]
    plan += [("test", c, PUBLISHED_TEST_PER_CLASS) for c in range(7)]
    for split, c, n in plan:
        for _ in range(n):
            sid = f"e{len(samples):04d}"
            samples.append(LabeledSample(sid, "p", split, c, fea))
            obs.extend(ImageObservation(sid, v, np.eye(7)[c], None) for v in VIEWS)
    return DatasetBundle(tuple(samples)), obs
