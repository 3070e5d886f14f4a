from fwigan.presets.load import load, read

__all__ = ["load", "read"]
