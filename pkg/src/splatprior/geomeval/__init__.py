"""Depth metrics, TSDF fusion, mesh extraction and mesh evaluation."""
from .depth import DepthMetrics, depth_metrics
from .mesh import MeshMetrics, TriangleMesh, frustum_crop, largest_component, mesh_metrics, sample_surface
from .pipeline import reconstruct_mesh_pipeline
from .sim3 import Sim3, sim3_icp, umeyama
from .trajectory import interpolate_pose, interpolate_trajectory
from .tsdf import EmptyMeshError, TSDFVolume, extract_mesh, tsdf_integrate

__all__ = [
    "DepthMetrics", "depth_metrics", "MeshMetrics", "TriangleMesh", "frustum_crop",
    "largest_component", "mesh_metrics", "sample_surface", "reconstruct_mesh_pipeline",
    "Sim3", "sim3_icp", "umeyama", "interpolate_pose", "interpolate_trajectory",
    "EmptyMeshError", "TSDFVolume", "extract_mesh", "tsdf_integrate",
]
