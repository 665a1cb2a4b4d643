import numpy as np
import pytest

import meshtally as mt

# the reference tet (0,0,0),(1,0,0),(0,1,0),(0,0,1)
REF_TET = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
])


@pytest.fixture(scope="session")
def cube1():
    return mt.build_cube_mesh(1)


@pytest.fixture(scope="session")
def cube2():
    return mt.build_cube_mesh(2)


@pytest.fixture(scope="session")
def cube4():
    return mt.build_cube_mesh(4)


@pytest.fixture(scope="session")
def cube10():
    return mt.build_cube_mesh(10)


@pytest.fixture(scope="session")
def ref_tet():
    return REF_TET.copy()
