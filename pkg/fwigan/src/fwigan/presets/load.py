from pathlib import Path

import yaml

from fwigan.config import InversionMode, TrainConfig

PRESET_DIR = Path(__file__).parent


def read(mode: InversionMode | str) -> dict:
    """Raw settings of one preset file, noisy-data overrides still nested under "noisy"."""
    try:
        mode = InversionMode(mode)
    except ValueError:
        raise ValueError(f"Unknown preset {mode}") from None

    with open(PRESET_DIR / f"{mode.value}.yaml", "r") as file:
        preset = yaml.safe_load(file) or {}

    if preset.get("mode", mode.value) != mode.value:
        raise ValueError(f"Preset {mode.value}.yaml declares mode {preset['mode']}")
    return preset


def load(mode: InversionMode | str, noisy: bool = False, **overrides) -> TrainConfig:
    """Published defaults for the mode, optionally with the noisy-data settings.

    Overrides set to None keep the preset value.
    """
    preset = read(mode)
    noisy_settings = preset.pop("noisy", {})
    if noisy:
        preset.update(noisy_settings)
    preset.update({k: v for k, v in overrides.items() if v is not None})

    return TrainConfig.model_validate(preset)
