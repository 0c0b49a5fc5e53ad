"""Model cost accounting: per-stage FLOPs and 16-bit quantization.

Prints the layer-level FLOPs breakdown for both networks, then quantizes
the archive to f16 and shows the size effect plus prediction agreement.

Run:  python3 demos/03_quantization_and_flops.py
"""

import numpy as np

from whar.harness.fixtures import gen_fixtures
from whar.models import FusionHead, ModelBundle, quantize_archive_f16


def top_layers(plan, n=6):
    return sorted(plan, key=lambda l: l.flops, reverse=True)[:n]


def main():
    fixtures = gen_fixtures(seed=42, preset_name="samosa-1k")
    archive = fixtures.energy_archive
    bundle = ModelBundle.from_archive(archive)

    det = bundle.detector
    clf = bundle.classifier
    print("== FLOPs (multiply-add = 2) ==")
    print(f"event detector:       {det.flops / 1e9:7.4f} G")
    print(f"activity classifier:  {clf.flops / 1e9:7.4f} G")
    for name, model in (("frontend", clf.frontend), ("audio encoder", clf.audio_encoder),
                        ("IMU encoder", clf.imu_encoder), ("fusion", clf.fusion)):
        print(f"    {name:<14} {sum(l.flops for l in model.plan) / 1e6:9.2f} M")
    print("\nheaviest classifier layers:")
    for layer in top_layers(clf.plan):
        print(f"    {layer.name:<28} {layer.kind:<18} {layer.flops / 1e6:8.2f} M "
              f"-> {layer.out_shape}")

    print("\n== f16 quantization ==")
    quantized = quantize_archive_f16(archive)
    before = archive.payload_nbytes()
    after = quantized.payload_nbytes()
    print(f"payload: {before / 1e6:.2f} MB -> {after / 1e6:.2f} MB "
          f"(x{after / before:.3f})")

    f32_head = FusionHead.from_archive(archive)
    f16_head = FusionHead.from_archive(quantized)
    rng = np.random.default_rng(0)
    agree = 0
    trials = 500
    for _ in range(trials):
        imu_emb = rng.normal(size=256).astype(np.float32)
        audio_emb = rng.normal(size=576).astype(np.float32)
        agree += (f32_head.forward(imu_emb, audio_emb)[1]
                  == f16_head.forward(imu_emb, audio_emb)[1])
    print(f"argmax agreement on {trials} random fusion inputs: "
          f"{agree}/{trials} ({100 * agree / trials:.1f}%)")


if __name__ == "__main__":
    main()
