"""Deterministic synthetic LV test feeder in the paper-scale shape.

Produces a 906-bus / 905-line radial feeder with 55 load+charger sites
and one-minute 24 h load shapes, written in the CSV formats the parser
reads. Layout: a 60-segment trunk, a 12-segment 110 A spine at trunk
depth 40 feeding a cluster of 10 evening-peaking homes, and 45 regular
homes on laterals hung between trunk depths 25 and 58. The cluster spine
is the only non-head bottleneck: it binds in the evening (heterogeneous
static optimum) but not at night (homogeneous optimum, used by the size
sweeps). Base loads never exceed 66% of any line's ampacity, so link
capacities stay strictly positive all day.

Everything is derived from fixed seeds; regenerating yields byte-identical
files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .feeder import default_ampacity_table

DEFAULT_SEED = 61409

TRUNK_LEN = 60
SPINE_ATTACH_DEPTH = 40
SPINE_LEN = 12
N_DEEP = 10
DEEP_DROP_LEN = 2
N_REGULAR = 45
TOTAL_LINES = 905
LATERAL_MIN, LATERAL_MAX = 10, 28
ATTACH_MIN, ATTACH_MAX = 25, 58

# static-instance anchors (kW per home, exact at the evening minute)
EVENING_MINUTE = 1110
NIGHT_MINUTE = 240
REGULAR_EVENING_KW = 0.5
DEEP_EVENING_KW = 1.7


def _lateral_lengths(rng: np.random.Generator) -> np.ndarray:
    """45 lateral lengths in [10, 28] summing exactly to the line budget."""
    budget = TOTAL_LINES - TRUNK_LEN - SPINE_LEN - N_DEEP * DEEP_DROP_LEN
    lens = rng.integers(LATERAL_MIN, LATERAL_MAX + 1, size=N_REGULAR)
    while lens.sum() != budget:
        i = int(rng.integers(0, N_REGULAR))
        if lens.sum() < budget and lens[i] < LATERAL_MAX:
            lens[i] += 1
        elif lens.sum() > budget and lens[i] > LATERAL_MIN:
            lens[i] -= 1
    return lens


def build_topology(seed: int = DEFAULT_SEED):
    """Return (lines, loads) row lists; lines in head-to-leaf (BFS) order.

    lines rows: (line_id, from_bus, to_bus, phases, code, length_m)
    loads rows: (load_id, bus, phase, shape_file, group) with group in
    {"regular", "deep"}; load ids 1..45 are regular, 46..55 deep.
    """
    rng = np.random.default_rng(seed)
    next_bus = 2
    raw = []  # (depth, order_key, from_bus, to_bus, code, length_m)

    trunk_bus = {0: 1}
    for d in range(1, TRUNK_LEN + 1):
        code = "4c_185" if d == 1 else ("4c_70" if d <= 40 else "4c_.1")
        raw.append((d, (0, d), trunk_bus[d - 1], next_bus, code, 30.0))
        trunk_bus[d] = next_bus
        next_bus += 1

    spine_bus = {0: trunk_bus[SPINE_ATTACH_DEPTH]}
    for j in range(1, SPINE_LEN + 1):
        raw.append((SPINE_ATTACH_DEPTH + j, (1, j), spine_bus[j - 1], next_bus,
                    "35_SAC_XSC", 25.0))
        spine_bus[j] = next_bus
        next_bus += 1

    deep_home_bus = []
    for i in range(N_DEEP):
        anchor = spine_bus[i + 1]
        depth = SPINE_ATTACH_DEPTH + i + 1
        for k in range(1, DEEP_DROP_LEN + 1):
            raw.append((depth + k, (2, i, k), anchor, next_bus, "2c_.007", 15.0))
            anchor = next_bus
            next_bus += 1
        deep_home_bus.append(anchor)

    attach = rng.integers(ATTACH_MIN, ATTACH_MAX + 1, size=N_REGULAR)
    lens = _lateral_lengths(rng)
    regular_home_bus = []
    for i in range(N_REGULAR):
        anchor = trunk_bus[int(attach[i])]
        for k in range(1, int(lens[i]) + 1):
            if k == lens[i]:
                code = "2c_.0225"
            elif i % 7 == 0 and k <= 3:
                code = "4c_95_SAC_XC"
            elif i % 11 == 0 and k <= 2:
                code = "4c_.06"
            elif attach[i] > 50 and k == 1:
                code = "4c_.35"
            else:
                code = "2c_16"
            raw.append((int(attach[i]) + k, (3, i, k), anchor, next_bus, code, 20.0))
            anchor = next_bus
            next_bus += 1
        regular_home_bus.append(anchor)

    raw.sort(key=lambda r: (r[0], r[1]))
    lines = [
        (lid + 1, fb, tb, 3, code, length)
        for lid, (_, _, fb, tb, code, length) in enumerate(raw)
    ]

    loads = []
    for i, bus in enumerate(regular_home_bus):
        lid = i + 1
        loads.append((lid, bus, 1 + (lid - 1) % 3, f"shape_{lid:03d}.csv", "regular"))
    for i, bus in enumerate(deep_home_bus):
        lid = N_REGULAR + i + 1
        loads.append((lid, bus, 1 + (lid - 1) % 3, f"shape_{lid:03d}.csv", "deep"))
    return lines, loads


def _gauss(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def build_shapes(seed: int = DEFAULT_SEED) -> dict[str, np.ndarray]:
    """Per-home 1440-minute kW profiles, evening values anchored exactly.

    Regular homes sum to 22.5 kW and the deep cluster to 17.0 kW at the
    evening minute, which pins the canonical static instance's capacities
    independent of the sampled curve parameters.
    """
    rng = np.random.default_rng(seed + 1)
    t = np.arange(1440, dtype=float)
    shapes: dict[str, np.ndarray] = {}

    reg_targets = REGULAR_EVENING_KW + 0.06 * rng.uniform(-1, 1, N_REGULAR)
    reg_targets += REGULAR_EVENING_KW - reg_targets.mean()
    deep_targets = DEEP_EVENING_KW + 0.05 * rng.uniform(-1, 1, N_DEEP)
    deep_targets += DEEP_EVENING_KW - deep_targets.mean()

    for i in range(N_REGULAR):
        night = 0.08 + 0.05 * rng.uniform()
        m_amp = 0.18 + 0.20 * rng.uniform()
        m_center = 430 + 60 * rng.uniform()
        m_width = 70 + 30 * rng.uniform()
        d_amp = 0.10 * rng.uniform()
        e_center = 1085 + 50 * rng.uniform()
        e_width = 95 + 35 * rng.uniform()
        base = (
            night
            + m_amp * _gauss(t, m_center, m_width)
            + d_amp * _gauss(t, 840, 150)
        )
        g_e = _gauss(t, e_center, e_width)
        e_amp = (reg_targets[i] - base[EVENING_MINUTE]) / g_e[EVENING_MINUTE]
        shapes[f"shape_{i + 1:03d}.csv"] = base + e_amp * g_e

    for i in range(N_DEEP):
        night = 0.08 + 0.04 * rng.uniform()
        m_amp = 0.10 + 0.10 * rng.uniform()
        m_center = 430 + 60 * rng.uniform()
        m_width = 70 + 30 * rng.uniform()
        e_center = 1100 + 25 * rng.uniform()
        e_width = 80 + 25 * rng.uniform()
        base = night + m_amp * _gauss(t, m_center, m_width)
        g_e = _gauss(t, e_center, e_width)
        e_amp = (deep_targets[i] - base[EVENING_MINUTE]) / g_e[EVENING_MINUTE]
        shapes[f"shape_{N_REGULAR + i + 1:03d}.csv"] = base + e_amp * g_e

    for name, s in shapes.items():
        if np.any(s < 0):
            raise AssertionError(f"{name}: negative kW sample")
    return shapes


def write_test_feeder(out_dir: str | Path, seed: int = DEFAULT_SEED) -> Path:
    """Write lines.csv, codes.csv, loads.csv and shapes/ under out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "shapes").mkdir(parents=True, exist_ok=True)
    lines, loads = build_topology(seed)
    shapes = build_shapes(seed)

    with open(out_dir / "lines.csv", "w", encoding="utf-8") as fh:
        fh.write("line_id,from_bus,to_bus,phases,line_code,length_m\n")
        for lid, fb, tb, ph, code, length in lines:
            fh.write(f"{lid},{fb},{tb},{ph},{code},{length:.12g}\n")
    with open(out_dir / "codes.csv", "w", encoding="utf-8") as fh:
        fh.write("line_code,ampacity_a\n")
        for code, amp in default_ampacity_table().items():
            fh.write(f"{code},{amp:.12g}\n")
    with open(out_dir / "loads.csv", "w", encoding="utf-8") as fh:
        fh.write("load_id,bus,phase,shape_file\n")
        for lid, bus, phase, shape_file, _ in loads:
            fh.write(f"{lid},{bus},{phase},{shape_file}\n")
    for name, samples in sorted(shapes.items()):
        np.savetxt(out_dir / "shapes" / name, samples, fmt="%.6f")
    return out_dir


def main(argv: list[str] | None = None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="generate the synthetic test feeder")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=DEFAULT_SEED)
    args = ap.parse_args(argv)
    write_test_feeder(args.out_dir, args.seed)
    print(f"wrote feeder data to {args.out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
