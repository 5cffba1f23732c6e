"""Why a plain conditional-normalization generator paints flat regions.

Builds untrained baseline generators and probes the per-block spatial std
on a single-class layout, for each padding mode and kernel size. Reflect
padding with 1x1 modulation convs gives exactly zero variation; zero
padding invents variation at the image border. Adding semantic noise
gives variation everywhere.
"""
from vasis_lab.diagnostics import format_ablation, generator_for, padding_kernel_ablation, per_block_std_probe, single_class_layout
from vasis_lab.networks import GeneratorSpec
from vasis_lab.vasis import VariantConfig

spec = GeneratorSpec(num_classes=3, base_channels=16, hidden=16, variant=VariantConfig.baseline())
print(format_ablation(padding_kernel_ablation(spec)))

vasis = generator_for(GeneratorSpec(num_classes=3, base_channels=16, hidden=16,
                                    variant=VariantConfig(padding_mode="reflect")))
report = per_block_std_probe(vasis, single_class_layout(3, spec.resolution))
print("\nVASIS, reflect padding, single class:")
for name, s in report.block_stds:
    print(f"  {name:<8} {s:.3e}")
