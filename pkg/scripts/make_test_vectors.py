"""Regenerate the bitstream test vectors in tests/vectors/.

symbols.json + symbols.bin: a list of (value, mu, b) triples and their
range-coded bytes.  toy_gop.bin + toy_gop.json: a 3-frame GOP (I, P, B at
64x64) with random quantized parameters and latents.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from ovc import numerics as nx
from ovc.coolchic import CoolChicDecoder, integer_latents, quantize_decoder_params
from ovc.entropy.bitstream import DecoderPayload, FrameRecord, GopHeader, decoder_kinds, write_gop
from ovc.entropy.laplace import encode_values


def symbol_vector(out: Path):
    rng = np.random.default_rng(2024)
    n = 200
    mu = np.round(rng.uniform(-20, 20, n), 4)
    b = np.round(np.exp(rng.uniform(-4, 4, n)), 6)
    v = np.clip(np.rint(mu + rng.laplace(0, b)), -32768, 32767).astype(int)
    v[:3] = [32767, -32768, 0]  # alphabet edges exercise the escape path
    data = encode_values(v, mu, b)
    (out / "symbols.json").write_text(json.dumps({"values": v.tolist(), "mu": mu.tolist(), "b": b.tolist()}))
    (out / "symbols.bin").write_bytes(data)


def toy_gop():
    rng = nx.make_rng(99)
    records = []
    for index, kind, refs in [(0, "I", ()), (2, "P", (0,)), (1, "B", (0, 2))]:
        decs = []
        for dk in decoder_kinds(kind):
            d = CoolChicDecoder.create(dk, 64, 64, rng)
            last = f"arm.{len(d.arch.arm) - 1}"
            d.params[f"{last}.w"].data[...] = rng.normal(0, 0.1, d.params[f"{last}.w"].shape)
            d.params[f"{last}.b"].data[...] = [0.0, 0.7]
            d.latents.data[...] = rng.laplace(0, 1.5, d.latents.size)
            qp, _ = quantize_decoder_params(d)
            decs.append(DecoderPayload(dk, qp, integer_latents(d)))
        records.append(FrameRecord(index, kind, refs, decs))
    return GopHeader(64, 64, 8, 3, 0, 1, 0.01), records


def gop_vector(out: Path):
    header, records = toy_gop()
    data, _ = write_gop(header, records)
    (out / "toy_gop.bin").write_bytes(data)
    desc = {"frames": [
        {"index": r.index, "kind": r.kind, "refs": list(r.refs), "decoders": [
            {"kind": d.kind, "latents": d.latents.tolist(),
             "params": {k: {"exponent": q.exponent, "values": q.values.ravel().tolist()} for k, q in d.qparams.items()}}
            for d in r.decoders]}
        for r in records]}
    (out / "toy_gop.json").write_text(json.dumps(desc))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "vectors"))
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    symbol_vector(out)
    gop_vector(out)
    print(f"wrote vectors to {out}")


if __name__ == "__main__":
    main()
