import numpy as np
import pytest

import nmtraj as nt


@pytest.fixture
def grid8():
    return nt.TimeGrid(epsilon=0.1, n_steps=8)


@pytest.fixture
def A8(grid8):
    return nt.build_kernel_matrix(nt.ExponentialKernel(rate=1.0), grid8)


@pytest.fixture
def default_model():
    return nt.default_qubit()


@pytest.fixture
def dephasing_model():
    return nt.dephasing_qubit()


@pytest.fixture
def zero_coupling_model():
    return nt.ModelSpec(dim=2, hamiltonian=nt.sigma_x(),
                        coupling=np.zeros((2, 2)),
                        initial_state=np.array([1.0, 0.0], dtype=complex))
