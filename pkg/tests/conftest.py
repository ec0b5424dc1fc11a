"""Session setup: tests assume the repository root as working directory
(bundled manifests live under models/)."""
import os

os.chdir(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
