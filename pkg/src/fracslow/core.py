from .mixins.helpers import HelpersMixin
from .mixins.experiments import ExperimentsMixin
from .mixins.publish import PublishMixin
from .mixins.loops import LoopsMixin
from .base import Base


class FracSlow(
    HelpersMixin,
    ExperimentsMixin,
    PublishMixin,
    LoopsMixin,
    Base,
):
    pass
