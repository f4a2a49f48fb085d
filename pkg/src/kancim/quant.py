"""Alignment-symmetric / power-gap quantization of the B-spline lookup path.

Input codes are laid out so each knot interval owns exactly ``L`` (or
``2**LD``) codes. Every interval then sees the same K+1 polynomial pieces at
the same local positions, so one table serves all basis functions, and the
mirror symmetry of the pieces lets half of that table be dropped.

Codes are mid-rise: code ``c`` reconstructs to the centre of its cell,
``lo + (c + 0.5) * h / L``. This is what makes local code ``u`` and
``L - 1 - u`` exact mirror images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import QuantRangeError
from .spline import BSplineSpec, KanLayer, _base_act, local_pieces_exact

MODES = ("conventional", "align_sym", "align_sym_powergap")


def solve_L(G: int, n: int) -> int:
    """Largest positive L with G * L <= 2**n."""
    if G < 1 or n < 1:
        raise ValueError("G and n must be >= 1")
    L = (1 << n) // G
    if L < 1:
        raise QuantRangeError(f"G={G} exceeds 2^{n}; no aligned quantization exists")
    return L


def solve_LD(G: int, n: int) -> int:
    """Largest LD >= 0 with G * 2**LD <= 2**n."""
    L = solve_L(G, n)
    return L.bit_length() - 1


@dataclass(frozen=True)
class QuantScheme:
    G: int
    n_bits: int = 8
    mode: str = "align_sym_powergap"
    coeff_bits: int = 8
    value_bits: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.value_bits is None:
            object.__setattr__(self, "value_bits", self.n_bits)
        if not 1 <= self.value_bits <= 16:
            raise ValueError("value_bits must be in 1..16")
        solve_L(self.G, self.n_bits)  # feasibility

    @property
    def L(self) -> int:
        return solve_L(self.G, self.n_bits)

    @property
    def LD(self) -> int:
        return solve_LD(self.G, self.n_bits)

    @property
    def D(self) -> int:
        return self.LD

    @property
    def local_codes(self) -> int:
        """Codes per knot interval (not meaningful for the conventional mode)."""
        if self.mode == "align_sym":
            return self.L
        if self.mode == "align_sym_powergap":
            return 1 << self.LD
        raise ValueError("conventional quantization has no per-interval code count")

    @property
    def n_codes(self) -> int:
        if self.mode == "conventional":
            return 1 << self.n_bits
        return self.G * self.local_codes

    @property
    def code_range_hi(self) -> int:
        return self.n_codes - 1

    def to_dict(self) -> dict:
        d = {"G": self.G, "n_bits": self.n_bits, "mode": self.mode,
             "coeff_bits": self.coeff_bits, "value_bits": self.value_bits,
             "L": self.L, "code_range_hi": self.code_range_hi}
        if self.mode != "conventional":
            d["LD"] = self.LD
        return d

    # code <-> input value

    def quantize_input(self, x, spec: BSplineSpec) -> np.ndarray:
        x = spec.clip(np.asarray(x, dtype=float))
        step = (spec.domain_hi - spec.domain_lo) / self.n_codes
        c = np.floor((x - spec.domain_lo) / step).astype(np.int64)
        return np.clip(c, 0, self.code_range_hi)

    def dequantize_input(self, codes, spec: BSplineSpec) -> np.ndarray:
        step = (spec.domain_hi - spec.domain_lo) / self.n_codes
        return spec.domain_lo + (np.asarray(codes, dtype=float) + 0.5) * step

    def code_position(self, code: int) -> Fraction:
        """Exact position of a code in knot-interval units (interval g spans [g, g+1))."""
        return Fraction(2 * code + 1, 2 * self.local_codes)


def full_scale(value_bits: int) -> int:
    return (1 << value_bits) - 1


def quantize_value(v: Fraction, value_bits: int) -> int:
    """Round-half-even of ``v * (2**bits - 1)`` in exact arithmetic."""
    return round(v * full_scale(value_bits))


@dataclass
class ShLut:
    """Sharable-hemi lookup table.

    ``stored`` holds rows ``u = 0 .. L//2 - 1`` (all K+1 pieces each). When
    ``L`` is odd the self-mirrored centre row is kept unshared in
    ``centre``, and only its first ``K//2 + 1`` entries are stored since that
    row is itself symmetric.
    """

    K: int
    G: int
    local_codes: int
    value_bits: int
    powergap: bool
    stored: np.ndarray
    centre: np.ndarray | None = None
    _table: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.stored = np.asarray(self.stored, dtype=np.int64).reshape(-1, self.K + 1)
        if self.centre is not None:
            self.centre = np.asarray(self.centre, dtype=np.int64)
        self._table = np.stack([self._row(u) for u in range(self.local_codes)])

    @property
    def LD(self) -> int:
        return self.local_codes.bit_length() - 1

    @property
    def odd(self) -> bool:
        return self.local_codes % 2 == 1

    @property
    def stored_entries(self) -> int:
        return self.stored.size + (0 if self.centre is None else self.centre.size)

    @property
    def full_entries(self) -> int:
        return self.local_codes * (self.K + 1)

    @property
    def code_range_hi(self) -> int:
        return self.G * self.local_codes - 1

    def _row(self, u: int) -> np.ndarray:
        L, K = self.local_codes, self.K
        half = L // 2
        if u < half:
            return self.stored[u].copy()
        if self.odd and u == half:
            j = np.arange(K + 1)
            return self.centre[np.minimum(j, K - j)]
        return self.stored[L - 1 - u][::-1].copy()

    def row(self, u: int) -> np.ndarray:
        """Quantized values of the K+1 pieces at local code ``u``, via hemi storage."""
        if not 0 <= u < self.local_codes:
            raise QuantRangeError(f"local code {u} outside [0, {self.local_codes})")
        return self._row(u)

    def full_table(self) -> np.ndarray:
        return self._table.copy()

    def split(self, code):
        """(interval g, local code u): high bits / low bits under power-gap."""
        if self.powergap:
            return code >> self.LD, code & (self.local_codes - 1)
        return divmod(code, self.local_codes)

    def lookup(self, code: int):
        code = int(code)
        if not 0 <= code <= self.code_range_hi:
            raise QuantRangeError(f"code {code} outside [0, {self.code_range_hi}]")
        g, u = self.split(code)
        return g, list(range(g, g + self.K + 1)), self.row(u)

    def lookup_batch(self, codes) -> tuple[np.ndarray, np.ndarray]:
        codes = np.asarray(codes, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() > self.code_range_hi):
            raise QuantRangeError(f"codes outside [0, {self.code_range_hi}]")
        g, u = self.split(codes)
        return g, self._table[u]

    def basis_codes(self, codes) -> np.ndarray:
        """Dense quantized basis vector(s), shape ``codes.shape + (K + G,)``."""
        g, vals = self.lookup_batch(codes)
        out = np.zeros(np.shape(codes) + (self.K + self.G,), dtype=np.int64)
        idx = g[..., None] + np.arange(self.K + 1)
        np.put_along_axis(out, idx, vals, axis=-1)
        return out

    # export / import

    def to_dict(self) -> dict:
        return {
            "format": "kancim-shlut", "version": 1,
            "K": self.K, "G": self.G, "local_codes": self.local_codes,
            "value_bits": self.value_bits, "powergap": self.powergap,
            "stored": self.stored.tolist(),
            "centre": None if self.centre is None else self.centre.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShLut":
        if d.get("format") != "kancim-shlut":
            raise ValueError("not an SH-LUT dump")
        return cls(d["K"], d["G"], d["local_codes"], d["value_bits"], d["powergap"],
                   np.array(d["stored"], dtype=np.int64).reshape(-1, d["K"] + 1), d["centre"])

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ShLut":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_sh_lut(spec: BSplineSpec, scheme: QuantScheme) -> ShLut:
    if scheme.mode == "conventional":
        raise ValueError("SH-LUT requires an aligned quantization mode")
    if scheme.G != spec.grid_G:
        raise ValueError(f"scheme G={scheme.G} does not match spline G={spec.grid_G}")
    K, L, vb = spec.order_K, scheme.local_codes, scheme.value_bits
    rows = []
    for u in range((L + 1) // 2):
        pieces = local_pieces_exact(scheme.code_position(u), K)
        rows.append([quantize_value(p, vb) for p in pieces])
    stored = np.array(rows[: L // 2], dtype=np.int64).reshape(-1, K + 1)
    centre = np.array(rows[L // 2][: K // 2 + 1], dtype=np.int64) if L % 2 else None
    return ShLut(K, scheme.G, L, vb, scheme.mode == "align_sym_powergap", stored, centre)


def build_conventional_luts(spec: BSplineSpec, scheme: QuantScheme) -> np.ndarray:
    """Baseline: one full-range table per basis function, shape [K+G, 2**n]."""
    n_codes = 1 << scheme.n_bits
    K, G = spec.order_K, spec.grid_G
    tab = np.zeros((K + G, n_codes), dtype=np.int64)
    for c in range(n_codes):
        t = Fraction(G * (2 * c + 1), 2 * n_codes)
        g = min(int(t), G - 1)
        for l, p in enumerate(local_pieces_exact(t - g, K)):
            tab[g + l, c] = quantize_value(p, scheme.value_bits)
    return tab


# --------------------------------------------------------------------------- #
# coefficients

def quantize_coeffs(coeffs, coeff_bits: int = 8) -> tuple[np.ndarray, float]:
    """Symmetric per-tensor quantization, round-half-even.

    Accepts a raw array or a :class:`KanLayer`. All-zero input gets scale 1.
    """
    if isinstance(coeffs, KanLayer):
        coeffs = coeffs.coeffs
    c = np.asarray(coeffs, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite coefficients")
    qmax = (1 << (coeff_bits - 1)) - 1
    m = float(np.max(np.abs(c))) if c.size else 0.0
    scale = m / qmax if m > 0 else 1.0
    codes = np.clip(np.rint(c / scale), -qmax, qmax).astype(np.int64)
    return codes, scale


# --------------------------------------------------------------------------- #
# resource counting

@dataclass(frozen=True)
class ResourceCount:
    lut_entries: int
    mux_inventory: tuple[tuple[str, int, int], ...]  # (MUX|DEMUX, ways, count)
    decoder_bits: tuple[int, ...]

    @property
    def mux_ways_total(self) -> int:
        return sum(w * c for _, w, c in self.mux_inventory)

    @property
    def decoder_lines(self) -> int:
        return sum(1 << b for b in self.decoder_bits)

    def to_dict(self) -> dict:
        return {
            "lut_entries": self.lut_entries,
            "mux_inventory": [{"kind": k, "ways": w, "count": c} for k, w, c in self.mux_inventory],
            "decoder_bits": list(self.decoder_bits),
        }


def hemi_entries(local_codes: int, K: int) -> int:
    return (local_codes // 2) * (K + 1) + (K // 2 + 1 if local_codes % 2 else 0)


def count_resources(scheme: QuantScheme, K: int) -> tuple[ResourceCount, ResourceCount]:
    """Baseline (per-basis full-range LUTs) vs the scheme's own datapath.

    * conventional: K+G tables of 2**n entries, K+G 2L-to-1 muxes, one n-bit decoder.
    * align_sym: one hemi table of L codes, the same muxes and decoder.
    * align_sym_powergap: one hemi table of 2**LD codes, K+1 (2**LD)-to-1
      muxes feeding K+1 1-to-G demuxes, decoders of n-LD and LD bits.
    """
    n, G, L = scheme.n_bits, scheme.G, scheme.L
    baseline = ResourceCount(
        lut_entries=(K + G) << n,
        mux_inventory=(("MUX", 2 * L, K + G),),
        decoder_bits=(n,),
    )
    if scheme.mode == "conventional":
        return baseline, baseline
    if scheme.mode == "align_sym":
        opt = ResourceCount(hemi_entries(L, K), (("MUX", 2 * L, K + G),), (n,))
        return baseline, opt
    LD = scheme.LD
    opt = ResourceCount(
        lut_entries=hemi_entries(1 << LD, K),
        mux_inventory=(("MUX", 1 << LD, K + 1), ("DEMUX", G, K + 1)),
        decoder_bits=(n - LD, LD),
    )
    return baseline, opt


# --------------------------------------------------------------------------- #
# quantized inference path

def lut_layer_forward(layer: KanLayer, x, scheme: QuantScheme, lut: ShLut) -> np.ndarray:
    """Layer output with the spline term fed from SH-LUT codes.

    Inputs are snapped to their code centres for the base path too, so the
    only difference from :meth:`KanLayer.forward` at the snapped inputs is the
    LUT value rounding.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    codes = scheme.quantize_input(X, layer.spec)
    Xq = scheme.dequantize_input(codes, layer.spec)
    Bq = lut.basis_codes(codes) / full_scale(lut.value_bits)
    base = _base_act(Xq, layer.base_act)[0]
    return base @ layer.base_weights.T + np.einsum("nji,oji->no", Bq, layer.coeffs)


def lut_error_bound(layer: KanLayer, x, scheme: QuantScheme) -> np.ndarray:
    """Per-output bound on |lut_layer_forward - forward(snapped x)|.

    Each active basis value is off by at most half an LSB, so the bound is
    sum over active (edge, basis) pairs of |c| / (2 * (2**bits - 1)).
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    codes = scheme.quantize_input(X, layer.spec)
    lsb_half = 0.5 / full_scale(scheme.value_bits)
    K = layer.spec.order_K
    g = codes // scheme.local_codes
    mask = np.zeros(codes.shape + (layer.spec.n_basis,))
    np.put_along_axis(mask, g[..., None] + np.arange(K + 1), 1.0, axis=-1)
    return lsb_half * np.einsum("nji,oji->no", mask, np.abs(layer.coeffs))
