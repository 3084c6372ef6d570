import sys
from pathlib import Path

# Tests import the oracle script as a sibling module.
sys.path.insert(0, str(Path(__file__).parent))
