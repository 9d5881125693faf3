from .plant import (  # noqa: F401
    FruitParams,
    MotorParams,
    NumericalBlowup,
    Plant,
    PlantConfig,
    PlantState,
)
from .bus import VirtualBus  # noqa: F401
