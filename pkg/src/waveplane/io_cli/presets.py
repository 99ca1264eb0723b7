"""Named hyperparameter bundles.

The four full-scale presets are pinned field-for-field by a golden test;
the micro presets are desk-scale variants for CI and quick experiments.
"""

PRESET_FIELDS = ("n_ll", "levels", "base_side", "final_side", "channels",
                 "reg_weight", "mlp_width", "mlp_depth_density",
                 "mlp_depth_color", "total_steps", "param_count")

PRESETS = {
    "small": dict(n_ll=64, levels=4, base_side=512, final_side=1024,
                  channels=16, reg_weight=0.2, mlp_width=64,
                  mlp_depth_density=1, mlp_depth_color=2, total_steps=6000,
                  param_count=17_000_000),
    "base-light": dict(n_ll=64, levels=5, base_side=512, final_side=2048,
                       channels=32, reg_weight=0.4, mlp_width=64,
                       mlp_depth_density=1, mlp_depth_color=2,
                       total_steps=10_000, param_count=134_000_000),
    "base": dict(n_ll=64, levels=5, base_side=512, final_side=2048,
                 channels=32, reg_weight=0.4, mlp_width=64,
                 mlp_depth_density=1, mlp_depth_color=2, total_steps=43_000,
                 param_count=134_000_000),
    "large": dict(n_ll=64, levels=5, base_side=512, final_side=2048,
                  channels=48, reg_weight=0.6, mlp_width=128,
                  mlp_depth_density=1, mlp_depth_color=2, total_steps=83_000,
                  param_count=201_000_000),
    # desk-scale variants; param_count not pinned
    "micro": dict(n_ll=16, levels=3, base_side=32, final_side=128,
                  channels=8, reg_weight=0.4, mlp_width=32,
                  mlp_depth_density=1, mlp_depth_color=2, total_steps=2000,
                  param_count=None),
    "micro-sr": dict(n_ll=16, levels=3, base_side=32, final_side=128,
                     channels=8, reg_weight=0.4, mlp_width=32,
                     mlp_depth_density=1, mlp_depth_color=2,
                     total_steps=1200, param_count=None),
}

FULL_SCALE = ("small", "base-light", "base", "large")


def get_preset(name):
    """Copy of a preset dict; unknown names list the alternatives."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; available: "
                         f"{', '.join(sorted(PRESETS))}")
    return dict(PRESETS[name])
