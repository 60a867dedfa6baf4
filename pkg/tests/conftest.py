import numpy as np
import pytest

from pathlib import Path

from foilnet.data import generate_dataset
from foilnet.geometry import AirfoilShape, GridSpec

REPO = Path(__file__).resolve().parent.parent
AIRFOILS = REPO / "airfoils"


@pytest.fixture(scope="session")
def airfoil_dir():
    return AIRFOILS


@pytest.fixture(scope="session")
def naca0012_text():
    return (AIRFOILS / "naca0012.dat").read_text()


def make_circle(n=100, radius=0.5, center=(0.5, 0.0)):
    """Clockwise circle polygon with the wrap vertex exactly on the +x axis.

    The wrap vertex acts as the trailing edge for the Kutta condition; on
    the axis it coincides with the symmetric rear stagnation point, so the
    zero-circulation cylinder solution applies.
    """
    th = -2.0 * np.pi * np.arange(n) / n
    pts = np.stack([radius * np.cos(th) + center[0],
                    radius * np.sin(th) + center[1]], axis=1)
    return AirfoilShape(name="circle", points=pts)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small real dataset shared by read-only tests: 18 samples, 2 test shapes."""
    root = tmp_path_factory.mktemp("tinyds")
    shapes_file = root / "test_shapes.txt"
    shapes_file.write_text("NACA 0012\nNACA 0015\n")
    manifest = generate_dataset(AIRFOILS, root / "ds", count=18, seed=7,
                                variant="C", shear_mode="none",
                                test_shapes_path=shapes_file, jobs=1)
    return Path(manifest)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """12 samples at 32x32 so tests that train or run models stay quick."""
    root = tmp_path_factory.mktemp("smallds")
    return generate_dataset(AIRFOILS, root, count=12, seed=11, variant="C",
                            shear_mode="none", jobs=1,
                            grid=GridSpec(resolution=32))
