"""Closed-form area / energy / latency estimate of the accelerator.

Order-of-magnitude bookkeeping only: every block cost is a unit cost from
:class:`TechParams` times a count taken from the quantization scheme, the
encoder and the crossbar tiling. Units are whatever the tech file uses.

Per layer the spline path is replicated once per input channel (one
decode lane per channel, all lanes in parallel); crossbars hold whole
channels down the rows and tile the output bit-slice columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .fabric import CrossbarConfig, EncoderConfig
from .mapping import BasisStats, channel_groups
from .quant import QuantScheme, count_resources, full_scale, quantize_coeffs
from .spline import KanModel

TECH_VERSION = 1
BLOCKS = ("lut", "mux", "decoder", "input_gen", "array", "adc", "other")


@dataclass(frozen=True)
class TechParams:
    """Unit costs. Defaults are illustrative, not calibrated to any process.

    Areas in um^2, energies in J, times in s.
    """

    lut_bit_area: float = 0.05
    lut_bit_energy: float = 1e-15
    mux_way_area: float = 0.1
    mux_way_energy: float = 0.5e-15
    decoder_line_area: float = 0.2
    decoder_line_energy: float = 0.2e-15
    dac_level_area: float = 20.0
    dac_level_energy: float = 5e-15
    delay_stage_area: float = 2.0
    delay_stage_energy: float = 1e-15
    cell_area: float = 0.05
    adc_bit_area: float = 30.0
    adc_bit_energy: float = 50e-15
    shift_add_area: float = 10.0
    shift_add_energy: float = 20e-15
    clock_period: float = 1e-9

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"tech parameter {f.name!r} must be a finite number >= 0")

    def to_dict(self) -> dict:
        return {"version": TECH_VERSION, "params": asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TechParams":
        if not isinstance(d, dict) or "version" not in d:
            raise ConfigError("tech file: missing key 'version'")
        if d["version"] != TECH_VERSION:
            raise ConfigError(f"tech file: unsupported version {d['version']!r}")
        params = d.get("params")
        if not isinstance(params, dict):
            raise ConfigError("tech file: missing key 'params'")
        names = [f.name for f in fields(cls)]
        for k in names:
            if k not in params:
                raise ConfigError(f"tech file: missing key 'params.{k}'")
        extra = sorted(set(params) - set(names))
        if extra:
            raise ConfigError(f"tech file: unknown key 'params.{extra[0]}'")
        return cls(**{k: params[k] for k in names})

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TechParams":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read tech file {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"tech file {path}: line {e.lineno}: {e.msg}") from None
        return cls.from_dict(d)


@dataclass
class BlockCost:
    area: float = 0.0
    energy: float = 0.0
    latency: float = 0.0

    def add(self, area=0.0, energy=0.0, latency=0.0):
        self.area += area
        self.energy += energy
        self.latency += latency


@dataclass
class CostReport:
    breakdown: dict[str, BlockCost] = field(default_factory=lambda: {b: BlockCost() for b in BLOCKS})

    @property
    def area(self) -> float:
        return math.fsum(b.area for b in self.breakdown.values())

    @property
    def energy(self) -> float:
        return math.fsum(b.energy for b in self.breakdown.values())

    @property
    def latency(self) -> float:
        return math.fsum(b.latency for b in self.breakdown.values())

    @property
    def power(self) -> float:
        return self.energy / self.latency if self.latency > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "area": self.area, "energy": self.energy, "latency": self.latency, "power": self.power,
            "breakdown": {k: asdict(v) for k, v in self.breakdown.items()},
        }


def adc_resolution(n_rows: int, enc: EncoderConfig, xbar: CrossbarConfig) -> int:
    """ADC bits per column: configured, or enough for the full column range."""
    if xbar.adc_bits is not None:
        return xbar.adc_bits
    return max(1, int(n_rows * (enc.n_inputs - 1)).bit_length())


def decode_path_area(res, value_bits: int, tech: TechParams) -> float:
    """Area of one spline decode lane: table bits, mux ways, decoder lines."""
    return (res.lut_entries * value_bits * tech.lut_bit_area
            + res.mux_ways_total * tech.mux_way_area
            + res.decoder_lines * tech.decoder_line_area)


def _per_layer(x, n: int, name: str) -> list:
    if isinstance(x, (list, tuple)):
        if len(x) != n:
            raise ConfigError(f"{name}: expected {n} entries, got {len(x)}")
        return list(x)
    return [x] * n


def estimate(model: KanModel, scheme: QuantScheme | Sequence[QuantScheme] | None,
             crossbar: CrossbarConfig, enc: EncoderConfig | Sequence[EncoderConfig],
             tech: TechParams, stats: Sequence[BasisStats] | None = None,
             n_bits: int = 8, mode: str = "align_sym_powergap") -> CostReport:
    """Cost of one inference through ``model``.

    ``scheme`` and ``enc`` may be given per layer; ``scheme=None`` builds one
    per layer from its grid. ``stats`` (per layer) sets the expected input
    code of each row; without it every channel spreads its full-scale
    partition of unity evenly over its basis rows.
    """
    rep = CostReport()
    layers = model.layers
    if not layers:
        return rep
    if scheme is None:
        schemes = [QuantScheme(l.spec.grid_G, n_bits, mode) for l in layers]
    else:
        schemes = _per_layer(scheme, len(layers), "scheme")
    encs = _per_layer(enc, len(layers), "enc")
    if stats is not None and len(stats) != len(layers):
        raise ConfigError(f"stats: expected {len(layers)} entries, got {len(stats)}")
    bd = rep.breakdown
    t = tech
    for li, (layer, sch, en) in enumerate(zip(layers, schemes, encs)):
        K, nb, ch, out = layer.spec.order_K, layer.spec.n_basis, layer.in_dim, layer.out_dim
        if sch.G != layer.spec.grid_G:
            raise ConfigError(f"layer {li}: scheme G={sch.G} but layer G={layer.spec.grid_G}")
        _, res = count_resources(sch, K)

        # spline decode path, one lane per input channel
        reads = nb if sch.mode == "conventional" else K + 1  # table words read per input
        bd["lut"].add(area=ch * res.lut_entries * sch.value_bits * t.lut_bit_area,
                      energy=ch * reads * sch.value_bits * t.lut_bit_energy)
        bd["mux"].add(area=ch * res.mux_ways_total * t.mux_way_area,
                      energy=ch * res.mux_ways_total * t.mux_way_energy)
        bd["decoder"].add(area=ch * res.decoder_lines * t.decoder_line_area,
                          energy=ch * res.decoder_lines * t.decoder_line_energy,
                          latency=t.clock_period)

        # crossbar tiling
        groups = channel_groups(ch, nb, crossbar.rows)
        data_cols = out * 2 * sch.coeff_bits
        col_tiles = math.ceil(data_cols / max(crossbar.cols - 1, 1))
        n_arrays = len(groups) * col_tiles
        rows_used = ch * nb
        cols_used = data_cols + col_tiles  # one reference column per tile

        n_seg = 2 if en.scheme == "tmdv" else 1
        bd["input_gen"].add(
            area=n_arrays * (en.dac_level_count * t.dac_level_area
                             + en.delay_chain_stages * t.delay_stage_area),
            energy=col_tiles * rows_used * n_seg * t.dac_level_energy
            + n_arrays * en.delay_chain_stages * t.delay_stage_energy,
            latency=en.latency_units * en.w_p1,
        )

        # array energy: charge drawn through programmed-on cells
        codes, _ = quantize_coeffs(layer.coeffs, sch.coeff_bits)
        mag = np.abs(codes)
        pop = np.zeros(mag.shape, dtype=np.int64)
        for b in range(sch.coeff_bits):
            pop += (mag >> b) & 1
        fs = full_scale(sch.value_bits)
        if stats is None:
            x_exp = np.full((ch, nb), fs / nb)
        else:
            st = stats[li]
            x_exp = fs * np.asarray(st.p) * np.asarray(st.mu)
        unit_q = en.w_p1 * crossbar.g_on * (crossbar.v_read - crossbar.v_clamp)
        charge_units = float(np.sum(pop * x_exp[None, :, :]))
        bd["array"].add(area=n_arrays * crossbar.rows * crossbar.cols * t.cell_area,
                        energy=charge_units * unit_q * crossbar.v_read)

        bits = adc_resolution(crossbar.rows, en, crossbar)
        conversions = len(groups) * cols_used
        bd["adc"].add(area=conversions * bits * t.adc_bit_area,
                      energy=conversions * bits * t.adc_bit_energy,
                      latency=t.clock_period)
        bd["other"].add(area=len(groups) * out * t.shift_add_area,
                        energy=len(groups) * data_cols * t.shift_add_energy,
                        latency=t.clock_period)
    return rep


def check_constraints(report: CostReport, budget: dict | None) -> tuple[bool, list[str]]:
    """Pass iff every set budget dimension is >= the report value."""
    violations = []
    for dim in ("area", "energy", "latency"):
        limit = (budget or {}).get(dim)
        if limit is not None and getattr(report, dim) > limit:
            violations.append(dim)
    return not violations, violations


def optimized_path_area(report: CostReport) -> float:
    """Area of the spline decode path (LUT, MUX, decoder)."""
    return sum(report.breakdown[b].area for b in ("lut", "mux", "decoder"))
