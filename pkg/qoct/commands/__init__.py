# __init__.py for Commands

from . import commands_simulate
from . import commands_acquisition
from . import commands_preprocess
from . import commands_reconstruct
from . import commands_run
