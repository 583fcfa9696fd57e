import numpy as np
import pytest

from superbranch.model import (BranchingMechanism, ImmigrationMechanism,
                               JumpChannel, JumpSizeLaw, LatticeModel,
                               MotionGenerator, preset_cbi, preset_kp18)

CBI_B, CBI_C, CBI_BETA = 1.0, 0.5, 0.3


@pytest.fixture(scope="session")
def cbi():
    return preset_cbi(CBI_B, CBI_C, CBI_BETA)


@pytest.fixture(scope="session")
def twosite():
    """2-site model exercising every ingredient: motion, diffusion, transfer,
    a non-compensated nonlocal channel and a compensated local one, plus
    deterministic and jump immigration."""
    return LatticeModel(
        sites=(0, 1),
        h=[1.0, 1.0],
        motion=MotionGenerator(q=[[0.0, 1.0], [1.0, 0.0]]),
        branching=BranchingMechanism(
            b=[1.5, 1.2],
            c=[0.3, 0.0],
            eta=[[0.0, 0.2], [0.1, 0.0]],
            h1_channels=(
                JumpChannel(intensity=0.5, profile=[0.0, 0.6],
                            size=JumpSizeLaw.exponential(2.0), site=0),
                JumpChannel(intensity=0.8, profile=[0.0, 1.0],
                            size=JumpSizeLaw.atomic([0.5]), compensated=True, site=1),
            ),
        ),
        immigration=ImmigrationMechanism(
            beta=[0.2, 0.1],
            h2_channels=(
                JumpChannel(intensity=0.4, profile=[1.0, 0.5],
                            size=JumpSizeLaw.gamma(2.0, 4.0)),
            ),
        ),
    )


@pytest.fixture(scope="session")
def kp18():
    """3-site ring with local CSBP branching plus nonlocal placement."""
    return preset_kp18(
        b=[1.2, 1.3, 1.1],
        c=[0.2, 0.25, 0.15],
        g=[0.3, 0.2, 0.25],
        d=[0.4, 0.3, 0.5],
        profiles=[[0, 1, 0], [0, 0, 1], [1, 0, 0]],
        local_jumps=[(0.3, JumpSizeLaw.exponential(3.0))] * 3,
        nonlocal_jumps=[(0.5, JumpSizeLaw.atomic([0.4]))] * 3,
        beta=[0.1, 0.15, 0.1],
    )


@pytest.fixture(scope="session")
def critical_chain():
    """Conservative chain with b = 0: motion only, no decay."""
    return LatticeModel(
        sites=(0, 1),
        h=[1.0, 1.0],
        motion=MotionGenerator(q=[[0.0, 1.0], [1.0, 0.0]]),
        branching=BranchingMechanism(b=[0.0, 0.0], c=[0.0, 0.0],
                                     eta=np.zeros((2, 2))),
        immigration=ImmigrationMechanism(beta=[0.0, 0.0]),
    )


def random_model(rng: np.random.Generator, d: int | None = None,
                 subcritical: bool = True, with_diffusion: bool = True) -> LatticeModel:
    """Small random model; with subcritical=True the linear rate is lifted
    until the weighted drift test certifies decay."""
    if d is None:
        d = int(rng.integers(1, 5))
    h = rng.uniform(0.5, 2.0, size=d)
    q = rng.uniform(0.0, 1.0, size=(d, d))
    np.fill_diagonal(q, 0.0)
    eta = rng.uniform(0.0, 0.2, size=(d, d))
    c = rng.uniform(0.1, 0.5, size=d) if with_diffusion else np.zeros(d)

    channels = []
    for _ in range(int(rng.integers(0, 3))):
        site = int(rng.integers(0, d))
        kind = int(rng.integers(0, 3))
        if kind == 0:
            law = JumpSizeLaw.atomic(rng.uniform(0.2, 1.5, size=2),
                                     rng.uniform(0.2, 1.0, size=2))
        elif kind == 1:
            law = JumpSizeLaw.exponential(rng.uniform(1.0, 4.0))
        else:
            law = JumpSizeLaw.gamma(rng.uniform(0.5, 3.0), rng.uniform(1.0, 4.0))
        if rng.random() < 0.4:
            profile = np.zeros(d)
            profile[site] = rng.uniform(0.3, 1.0)
            channels.append(JumpChannel(intensity=float(rng.uniform(0.1, 0.6)),
                                        profile=profile, size=law,
                                        compensated=True, site=site))
        else:
            profile = rng.uniform(0.0, 1.0, size=d)
            profile[int(rng.integers(0, d))] += 0.2  # guarantee support
            channels.append(JumpChannel(intensity=float(rng.uniform(0.1, 0.6)),
                                        profile=profile, size=law, site=site))

    h2 = []
    if rng.random() < 0.7:
        profile = rng.uniform(0.0, 1.0, size=d) + 0.05
        h2.append(JumpChannel(intensity=float(rng.uniform(0.1, 0.5)),
                              profile=profile,
                              size=JumpSizeLaw.exponential(rng.uniform(1.0, 4.0))))

    b = rng.uniform(0.3, 1.0, size=d)
    model = LatticeModel(
        sites=tuple(range(d)), h=h, motion=MotionGenerator(q=q),
        branching=BranchingMechanism(b=b, c=c, eta=eta, h1_channels=tuple(channels)),
        immigration=ImmigrationMechanism(beta=rng.uniform(0.0, 0.4, size=d),
                                         h2_channels=tuple(h2)))
    if subcritical:
        from superbranch.mechanisms import assemble_moment_operator

        drift = assemble_moment_operator(model).matrix @ h / h
        lift = max(0.0, float(drift.max())) + float(rng.uniform(0.3, 1.0))
        model = LatticeModel(
            sites=model.sites, h=h, motion=model.motion,
            branching=BranchingMechanism(b=b + lift, c=c, eta=eta,
                                         h1_channels=tuple(channels)),
            immigration=model.immigration)
    return model
