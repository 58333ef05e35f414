from mesh.builder import (GeometrySpec, Mesh, Region, build_disk_in_square,
                          build_mesh_hierarchy, hole_area, refine_uniform, validate_mesh)
from mesh.reader import MeshReader, load_mesh, write_mesh

__all__ = [
    'GeometrySpec', 'Mesh', 'Region', 'build_disk_in_square', 'build_mesh_hierarchy',
    'hole_area', 'refine_uniform', 'validate_mesh', 'MeshReader', 'load_mesh', 'write_mesh',
]
