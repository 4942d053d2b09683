import numpy as np
import pytest

from segapipe.volgrid import Geometry3, ImageVolume, LabelVolume, TriMesh


def make_geom(dims=(4, 4, 4), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    return Geometry3(dims=dims, spacing=spacing, origin=origin)


def random_label(rng, dims, p=0.3, spacing=(1.0, 1.0, 1.0)):
    nzyx = (dims[2], dims[1], dims[0])
    vox = (rng.random(nzyx) < p).astype(np.uint8)
    return LabelVolume(geom=make_geom(dims, spacing), voxels=vox)


def icosphere(radius=10.0, subdiv=3):
    """Subdivided icosahedron with vertices projected onto the sphere."""
    phi = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
         [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
         [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    for _ in range(subdiv):
        mid = {}
        verts = list(v)
        nf = []

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                mid[key] = len(verts)
                verts.append((verts[a] + verts[b]) / 2)
            return mid[key]

        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.array(verts)
        f = np.array(nf)
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * radius
    return TriMesh(vertices=v, triangles=f.astype(np.int32))


@pytest.fixture(scope="session")
def phantom64():
    from segapipe.phantom import make_phantom

    return make_phantom(0)
