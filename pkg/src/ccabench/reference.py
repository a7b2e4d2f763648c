"""Published FVP measurements used for calibration and held-out checks.

All instruction counts are in millions. Settings are numbered 1-8.
"""

from __future__ import annotations

from dataclasses import dataclass

from .world import ExceptionLevel, SecurityState

STAGES = ("model_init", "read_input", "inference_compute", "write_output")


@dataclass(frozen=True)
class Setting:
    number: int
    model: str
    model_mb: int
    api: str
    input_format: str
    vm_mb: int


SETTINGS = {
    1: Setting(1, "AlexNet", 9, "TensorFlow Lite", "bmp", 300),
    2: Setting(2, "MobileNet_v1_1.0_224", 16, "TensorFlow Lite", "bmp", 400),
    3: Setting(3, "ResNet18", 44, "TensorFlow Lite", "bmp", 450),
    4: Setting(4, "Inception_v3", 95, "TensorFlow", "jpg", 1750),
    5: Setting(5, "VGG", 261, "TensorFlow", "wav", 3650),
    6: Setting(6, "GPT2", 177, "llama.cpp", "text", 900),
    7: Setting(7, "GPT2-large", 898, "llama.cpp", "text", 1800),
    8: Setting(8, "TinyLlama-1.1B-Chat", 1169, "llama.cpp", "text", 2000),
}

# setting -> stage -> (realm mean, nw mean, printed overhead %)
STAGE_TABLE = {
    1: {"model_init": (1.6, 1.2, 33), "read_input": (0.6, 0.3, 100),
        "inference_compute": (98.0, 82.0, 19), "write_output": (1.1, 0.5, 120),
        "total": (105.9, 87.8, 20)},
    2: {"model_init": (1.7, 1.2, 41), "read_input": (4.7, 1.1, 100),
        "inference_compute": (335.4, 278.9, 20), "write_output": (0.7, 0.3, 133),
        "total": (351.8, 289.3, 21)},
    3: {"model_init": (2.1, 1.6, 31), "read_input": (0.6, 0.3, 100),
        "inference_compute": (418.2, 344.0, 21), "write_output": (0.9, 0.4, 125),
        "total": (442.8, 363.2, 20)},
    4: {"model_init": (397.9, 333.4, 19), "read_input": (2.8, 1.8, 55),
        "inference_compute": (7663.8, 6382.8, 20), "write_output": (4.6, 3.5, 31),
        "total": (8717.2, 7201.1, 21)},
    5: {"model_init": (345.1, 295.8, 16), "read_input": (1.8, 1.1, 63),
        "inference_compute": (6365.7, 5420.7, 17), "write_output": (0.15, 0.09, 66),
        "total": (6713.2, 5717.9, 17)},
    6: {"model_init": (1039.1, 821.9, 26), "read_input": (2.7, 1.8, 50),
        "inference_compute": (12036.6, 9858.7, 22), "write_output": (0.11, 0.04, 75),
        "total": (13144.9, 10726.3, 22)},
    7: {"model_init": (2653.6, 2158.5, 22), "read_input": (2.7, 1.8, 50),
        "inference_compute": (73603.1, 59870.6, 22), "write_output": (0.07, 0.04, 75),
        "total": (76412.3, 62156.4, 22)},
    8: {"model_init": (2784.9, 2312.1, 20), "read_input": (2.6, 1.8, 44),
        "inference_compute": (94480.0, 79452.7, 18), "write_output": (0.07, 0.04, 75),
        "total": (97433.3, 81905.6, 18)},
}

# setting -> (realm std, nw std) of the total
TOTAL_STD = {
    1: (3.0, 0.1), 2: (9.7, 1.2), 3: (15.1, 0.1), 4: (23.2, 15.9),
    5: (210.3, 19.1), 6: (278.7, 30.9), 7: (1968.9, 250.3), 8: (6234.8, 620.7),
}

TOTAL_BAND = (17.0, 22.0)

N, RL, RT = SecurityState.NORMAL, SecurityState.REALM, SecurityState.ROOT
EL0, EL1, EL2, EL3 = ExceptionLevel

# one inference, setting 2, per (world, EL)
PER_CONTEXT_REALM = {
    (RL, EL0): 240.14, (RL, EL1): 24.68, (RL, EL2): 41.18,
    (N, EL0): 0.04, (N, EL2): 16.84, (RT, EL3): 5.13,
}
PER_CONTEXT_NW = {(N, EL0): 240.18, (N, EL1): 23.85, (N, EL2): 14.80}

# setting -> (realm, nw, printed overhead %)
BOOT = {
    2: (7630.1, 788.7, 867), 4: (24960.7, 1246.6, 1902),
    5: (44499.3, 2329.4, 1832), 6: (21101.5, 1195.0, 1665),
}
TEARDOWN = {
    2: (619.9, 83.3, 644), 4: (2332.4, 93.1, 2405),
    5: (5156.4, 142.4, 3521), 6: (1325.3, 87.1, 1421),
}

# setting 2 ran with kvmtool, hypervisor tick 1000 Hz, guest tick 100 Hz
TIMERS_HZ = {"el1_hz": 100, "el2_hz": 1000}


def to_instructions(millions: float) -> int:
    return round(millions * 1_000_000)
