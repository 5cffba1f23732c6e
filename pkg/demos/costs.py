"""Parameter and FLOP accounting for the modulation variants.

Halving the semantic branch (concat mode) more than pays for the noise banks
on the convolutional path.
"""
from vasis_lab.metrics import count_params_flops, enumerate_params
from vasis_lab.diagnostics import generator_for
from vasis_lab.networks import GeneratorSpec
from vasis_lab.vasis import VariantConfig

print(f"{'variant':<12} {'params':>9} {'modulation':>11} {'MFLOPs':>9}")
for name, variant in [("baseline", VariantConfig.baseline()), ("concat", VariantConfig()),
                      ("plus", VariantConfig(combine_mode="plus")),
                      ("one_channel", VariantConfig(combine_mode="one_channel")),
                      ("rand", VariantConfig(combine_mode="rand"))]:
    spec = GeneratorSpec(num_classes=3, variant=variant)
    cost = count_params_flops(spec)
    assert cost.params == enumerate_params(generator_for(spec))
    print(f"{name:<12} {cost.params:>9d} {cost.modulation_params:>11d} {cost.flops / 1e6:>9.1f}")
