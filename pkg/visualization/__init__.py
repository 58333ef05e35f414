from visualization.export import (design_on_cells, read_design_csv, write_design_csv, write_eigen_csv,
                                  field_point_data, write_field_csv, write_frame, write_vtk)
from visualization.plotter import CloakPlotter

__all__ = [
    'CloakPlotter', 'design_on_cells', 'read_design_csv', 'write_design_csv', 'write_eigen_csv',
    'field_point_data', 'write_field_csv', 'write_frame', 'write_vtk',
]
