import math

import numpy as np
import pytest

from leodrl.channel import ArrayGeometry, ChannelConfig
from leodrl.env import DemandProcess, DownlinkEnv, TimeScales
from leodrl.link import LinkBudget, OffsetGrid, RbPool
from leodrl.orbit import overhead_config

UE_ECEF = np.array([5045.27e3, 3881.81e3, -393.28e3])
T_ZENITH = 300.0


def tiny_env(
    seed=0,
    num_rbs=12,
    num_groups=3,
    slots_per_cycle=10,
    episode_slots=60,
    rician_k_db=10.0,
    doppler_scale=1.0,
    pointing_bias=0.0,
    tx_shape=(4, 4),
    tx_gain_dbi=30.0,
    rx_gain_dbi=30.0,
    eta=1.0,
    reward_window=20,
    lam=2.0,
    unit_bits=1e7,
    episode_offset=0.0,
):
    """Desk-scale environment: 12 RBs in 3 groups, 4x4 tx / 2x2 rx arrays."""
    lb = LinkBudget(tx_gain_dbi=tx_gain_dbi, rx_gain_dbi=rx_gain_dbi)
    lam_c = lb.wavelength
    arrays = ArrayGeometry(tx_shape[0], tx_shape[1], 2, 2, lam_c / 2, lam_c / 2, lam_c)
    orbit_cfg = overhead_config(UE_ECEF, 600e3, math.radians(10.0), T_ZENITH)
    return DownlinkEnv(
        orbit_cfg=orbit_cfg,
        ue_ecef=UE_ECEF,
        arrays=arrays,
        channel_cfg=ChannelConfig(rician_k_db=rician_k_db, doppler_scale=doppler_scale,
                                  pointing_bias=pointing_bias),
        link_budget=lb,
        pool=RbPool.contiguous(num_rbs, num_groups),
        times=TimeScales(slots_per_cycle, episode_slots),
        demand_process=DemandProcess(lam=lam, unit_bits=unit_bits),
        offset_grid=OffsetGrid(),
        eta=eta,
        reward_window=reward_window,
        episode_start=T_ZENITH + episode_offset,
        seed=seed,
    )


def comparison_env(seed=0, episode_slots=60, **overrides):
    """Scheme-comparison operating point: strong multipath, slow phase drift,
    quasi-static pointing bias, 8x8 transmit array at moderate SNR."""
    args = dict(
        rician_k_db=0.0,
        doppler_scale=0.1,
        pointing_bias=math.radians(8.0),
        tx_shape=(8, 8),
        tx_gain_dbi=15.0,
        rx_gain_dbi=15.0,
    )
    args.update(overrides)
    return tiny_env(seed=seed, episode_slots=episode_slots, **args)


@pytest.fixture
def env():
    return tiny_env()


def tiny_agents(env, seed=0, **overrides):
    """Small networks sized for fast desk-scale training runs."""
    from leodrl.collab import AgentsConfig, HighAgent, LowAgent

    defaults = dict(
        policy_hidden=(32, 32),
        value_hidden=(32, 32),
        learning_rate=3e-3,
        rollout_tx_offsets=(2, 3, 4),  # {-2, 0, +2} degrees
    )
    defaults.update(overrides)
    cfg = AgentsConfig(**defaults)
    rng = np.random.default_rng(seed)
    low_dim = env.pool.num_rbs + env.arrays.n_r
    high_dim = 3 + env.times.slots_per_cycle
    low = LowAgent(rng, low_dim, env.grid, env.pool, cfg)
    high = HighAgent(rng, high_dim, env.grid, env.pool, cfg)
    return low, high
