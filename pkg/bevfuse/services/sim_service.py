import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial import Delaunay, QhullError

from bevfuse.config import settings, thread_count
from bevfuse.errors import SimError
from bevfuse.models.camera import Calibration
from bevfuse.models.geometry import BevGrid, GridSpec, Pose2D, normalize_angle
from bevfuse.models.metrics import ObstacleInstance
from bevfuse.models.run import RunConfig
from bevfuse.models.scene import (
    OBSTACLE_CATALOG,
    ArrivalModel,
    Obstacle,
    ObstacleKind,
    ObstacleShape,
    Scene,
    SceneIndex,
    SimConfig,
    Split,
    SyntheticSample,
    obstacle_from_catalog,
)
from bevfuse.models.sync import OdometrySample
from bevfuse.models.ultrasonic import EchoEnvelope, SensorLayout, UltrasonicFrame
from bevfuse.services.fisheye_service import fisheye_service
from bevfuse.services.geometry_service import geometry_service
from bevfuse.services.metrics_service import metrics_service
from bevfuse.services.storage_service import storage_service
from bevfuse.services.sync_service import sync_service
from bevfuse.services.ultrasonic_service import ultrasonic_service

logger = logging.getLogger(__name__)

# Boundary sampling step for reflector search and silhouettes, meters
BOUNDARY_STEP_M = 0.02
# Point obstacles are rendered as thin poles
POINT_RENDER_RADIUS_M = 0.03
# Farthest footprint point from the rear bumper
MAX_PLACEMENT_RANGE_M = 6.0


class SimService:
    """Synthetic scenes: placement, echoes, fisheye silhouettes and BEV ground truth"""

    @staticmethod
    def scene_rng(master_seed: int, scene_index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([master_seed, scene_index]))

    # Timing
    @staticmethod
    def camera_timestamps(sim: SimConfig) -> List[float]:
        count = int(math.floor(sim.duration_ms / sim.camera_period_ms + 1e-9)) + 1
        # k * period can overshoot the duration by an ulp
        return [min(k * sim.camera_period_ms, sim.duration_ms) for k in range(count)]

    @staticmethod
    def sample_gaps(sim: SimConfig, rng: np.random.Generator, count: int) -> np.ndarray:
        """Inter-arrival gaps of the ultrasonic stream, ms"""
        if sim.arrival_model == ArrivalModel.BIMODAL:
            base = np.where(rng.random(count) < sim.p_short, sim.gap_short_ms, sim.gap_long_ms)
        else:
            # measurements every ~66 ms, published on the next 40 ms odometry tick
            measured = np.arange(1, count + 2) * sim.measurement_period_ms
            published = np.ceil(measured / sim.gap_short_ms) * sim.gap_short_ms
            base = np.diff(published)[:count]
        jitter = rng.uniform(-sim.gap_jitter_ms, sim.gap_jitter_ms, count)
        return np.clip(base + jitter, sim.gap_min_ms, sim.gap_max_ms)

    @staticmethod
    def sample_arrivals(sim: SimConfig, rng: np.random.Generator) -> List[float]:
        """Ultrasonic arrival times starting at 0 and covering the scene duration"""
        count = int(math.ceil(sim.duration_ms / sim.gap_min_ms)) + 1
        times = np.concatenate([[0.0], np.cumsum(SimService.sample_gaps(sim, rng, count))])
        return [float(t) for t in times if t <= sim.duration_ms]

    # Ego motion
    @staticmethod
    def sample_speed_kmh(sim: SimConfig, rng: np.random.Generator) -> float:
        if sim.max_speed_kmh <= 0.5 or rng.random() < sim.p_stationary:
            return 0.0
        return float(rng.uniform(0.5, sim.max_speed_kmh))

    @staticmethod
    def ego_track(speed_kmh: float, times: List[float]) -> List[OdometrySample]:
        """Straight forward motion from the world origin"""
        v = speed_kmh / 3.6 / 1000.0  # meters per ms
        return [OdometrySample(timestamp=t, pose=Pose2D(x=v * t, y=0.0, yaw=0.0)) for t in times]

    # Placement
    @staticmethod
    def footprint_extent(obstacle: Obstacle) -> float:
        if obstacle.shape == ObstacleShape.BOX:
            return 0.5 * math.hypot(obstacle.width, obstacle.length)
        if obstacle.shape == ObstacleShape.CYLINDER:
            return obstacle.radius
        return 0.0

    @staticmethod
    def bumper_center(layout: SensorLayout) -> Tuple[float, float]:
        return (min(s.pose.x for s in layout.sensors), 0.0)

    @staticmethod
    def obstacle_range(obstacle: Obstacle, layout: SensorLayout) -> float:
        """Distance from the rear bumper to the nearest footprint point, bounded-circle estimate"""
        bx, by = SimService.bumper_center(layout)
        center = math.hypot(obstacle.pose.x - bx, obstacle.pose.y - by)
        return max(center - SimService.footprint_extent(obstacle), 0.0)

    @staticmethod
    def sample_obstacles(sim: SimConfig, rng: np.random.Generator, layout: SensorLayout) -> List[Obstacle]:
        bx, by = SimService.bumper_center(layout)
        kinds = list(ObstacleKind)
        count = int(rng.integers(sim.obstacles_min, sim.obstacles_max + 1))
        max_az = math.radians(sim.max_azimuth_deg)
        placed: List[Obstacle] = []
        for _ in range(count):
            for _attempt in range(30):
                kind = kinds[int(rng.integers(len(kinds)))]
                reflectivity = OBSTACLE_CATALOG[kind]["reflectivity"] * float(rng.uniform(0.85, 1.0))
                clearance = min(sim.range_min_m + float(rng.gamma(sim.range_gamma_shape, sim.range_gamma_scale)),
                                sim.range_max_m)
                azimuth = float(rng.uniform(-max_az, max_az))
                heading = float(rng.uniform(-math.pi, math.pi))
                probe = obstacle_from_catalog(kind, Pose2D.identity(), reflectivity)
                extent = SimService.footprint_extent(probe)
                distance = min(clearance + extent, MAX_PLACEMENT_RANGE_M - extent)
                pose = Pose2D(
                    x=bx - distance * math.cos(azimuth), y=by + distance * math.sin(azimuth), yaw=heading
                )
                candidate = probe.model_copy(update={"pose": pose})
                clear = all(
                    math.hypot(pose.x - o.pose.x, pose.y - o.pose.y)
                    > extent + SimService.footprint_extent(o) + 0.1
                    for o in placed
                )
                if clear:
                    placed.append(candidate)
                    break
        return placed

    @staticmethod
    def build_scene(
        config: RunConfig,
        master_seed: int,
        scene_index: int,
        scene_id: str,
        layout: SensorLayout,
        calibration: Calibration,
    ) -> Tuple[Scene, List[float]]:
        """Scene ground truth and its ultrasonic arrival times"""
        sim = config.sim
        rng = SimService.scene_rng(master_seed, scene_index)
        arrivals = SimService.sample_arrivals(sim, rng)
        speed = SimService.sample_speed_kmh(sim, rng)
        odometry_times = sorted(set(arrivals) | {sim.duration_ms})
        obstacles = SimService.sample_obstacles(sim, rng, layout)
        scene_seed = int(np.random.SeedSequence([master_seed, scene_index]).generate_state(1)[0])
        scene = Scene(
            scene_id=scene_id,
            seed=scene_seed,
            obstacles=obstacles,
            ego_track=SimService.ego_track(speed, odometry_times),
            layout=layout,
            calibration=calibration,
            noise_level=sim.noise_level,
            sample_spacing=sim.sample_spacing,
            envelope_samples=sim.envelope_samples,
        )
        return scene, arrivals

    # Geometry of obstacles at time t
    @staticmethod
    def obstacles_in_vehicle(scene: Scene, t: float) -> List[Tuple[Obstacle, Pose2D]]:
        ego = sync_service.interpolate_pose(scene.ego_track, t)
        to_vehicle = geometry_service.pose_inverse(ego)
        return [(o, geometry_service.pose_compose(to_vehicle, o.pose)) for o in scene.obstacles]

    @staticmethod
    def boundary_samples(obstacle: Obstacle, pose: Pose2D, step: float = BOUNDARY_STEP_M) -> np.ndarray:
        """Footprint outline in the frame `pose` is expressed in, shape (n, 2)"""
        if obstacle.shape == ObstacleShape.POINT:
            local = np.zeros((1, 2))
        elif obstacle.shape == ObstacleShape.CYLINDER:
            n = max(16, int(math.ceil(2.0 * math.pi * obstacle.radius / step)))
            phi = np.arange(n) * (2.0 * math.pi / n)
            local = obstacle.radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        else:
            hl, hw = 0.5 * obstacle.length, 0.5 * obstacle.width
            corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw], [hl, hw]])
            edges = []
            for a, b in zip(corners[:-1], corners[1:]):
                n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)))
                s = np.arange(n)[:, None] / n
                edges.append(a + s * (b - a))
            local = np.concatenate(edges)
        return geometry_service.pose_apply_many(pose, local)

    # Sensors
    @staticmethod
    def synth_echoes(scene: Scene, t: float, rng: Optional[np.random.Generator] = None) -> UltrasonicFrame:
        """First-order echoes of every obstacle on every signalway"""
        layout = scene.layout
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([scene.seed, int(round(t * 1000.0))]))
        n = scene.envelope_samples
        spacing = scene.sample_spacing
        xs = np.arange(n) * spacing
        sigma = 2.0 * spacing
        speed_ratio = 1.0
        if scene.speed_of_sound_mps is not None:
            # envelopes are indexed with the assumed speed of sound
            speed_ratio = settings.SPEED_OF_SOUND_MPS / scene.speed_of_sound_mps
        outlines = [(o, SimService.boundary_samples(o, pose)) for o, pose in SimService.obstacles_in_vehicle(scene, t)]

        envelopes = []
        for sw in layout.signalways:
            s1, s2 = layout.sensor(sw.tx).pose, layout.sensor(sw.rx).pose
            amps = np.zeros(n)
            for obstacle, pts in outlines:
                d1 = np.hypot(pts[:, 0] - s1.x, pts[:, 1] - s1.y)
                d2 = np.hypot(pts[:, 0] - s2.x, pts[:, 1] - s2.y)
                k = int(np.argmin(d1 + d2))
                r1, r2 = float(d1[k]), float(d2[k])
                if r1 >= layout.max_range or r2 >= layout.max_range:
                    continue
                px, py = pts[k]
                a1 = normalize_angle(math.atan2(py - s1.y, px - s1.x) - s1.yaw) if r1 > 0 else 0.0
                a2 = normalize_angle(math.atan2(py - s2.y, px - s2.x) - s2.yaw) if r2 > 0 else 0.0
                w1 = ultrasonic_service.attenuation_weight(a1, ultrasonic_service.effective_half_angle(layout, r1))
                w2 = ultrasonic_service.attenuation_weight(a2, ultrasonic_service.effective_half_angle(layout, r2))
                round_trip = r1 + r2
                if w1 * w2 == 0.0 or round_trip <= 0.0:
                    continue
                # inverse-square decay, 1 m reference
                peak = obstacle.reflectivity * w1 * w2 / (round_trip * round_trip)
                center = round_trip * speed_ratio
                amps += peak * np.exp(-0.5 * ((xs - center) / sigma) ** 2)
            if scene.noise_level > 0:
                amps += rng.uniform(0.0, scene.noise_level, n)
            envelopes.append(
                EchoEnvelope(
                    emitter_id=sw.tx, receiver_id=sw.rx, amplitudes=np.clip(amps, 0.0, None), sample_spacing=spacing
                )
            )
        return UltrasonicFrame(timestamp=t, envelopes=envelopes)

    @staticmethod
    def background(height: int, width: int) -> np.ndarray:
        """Vertical gradient, bright at the top"""
        rows = np.linspace(200.0, 100.0, height)
        return np.repeat(rows[:, None], width, axis=1)

    @staticmethod
    def render_fisheye(scene: Scene, t: float) -> np.ndarray:
        """Filled obstacle silhouettes over the background, nearest drawn last"""
        intrinsics = scene.calibration.intrinsics()
        extrinsics = scene.calibration.extrinsics()
        image = SimService.background(intrinsics.height, intrinsics.width)
        cam_xy = (extrinsics.x, extrinsics.y)

        placed = SimService.obstacles_in_vehicle(scene, t)
        placed.sort(key=lambda item: -math.hypot(item[1].x - cam_xy[0], item[1].y - cam_xy[1]))
        for obstacle, pose in placed:
            if obstacle.shape == ObstacleShape.POINT:
                outline_src = obstacle.model_copy(update={"shape": ObstacleShape.CYLINDER, "radius": POINT_RENDER_RADIUS_M})
            else:
                outline_src = obstacle
            ring = SimService.boundary_samples(outline_src, pose)
            ground = np.column_stack([ring, np.zeros(len(ring))])
            top = np.column_stack([ring, np.full(len(ring), obstacle.height)])
            uv, valid = fisheye_service.project_many(
                fisheye_service.vehicle_to_camera(extrinsics, np.vstack([ground, top])), intrinsics
            )
            uv = uv[valid]
            if len(uv) < 3:
                continue
            try:
                hull = Delaunay(uv)
            except QhullError:
                continue
            u0 = max(int(math.floor(uv[:, 0].min())), 0)
            u1 = min(int(math.ceil(uv[:, 0].max())), intrinsics.width - 1)
            v0 = max(int(math.floor(uv[:, 1].min())), 0)
            v1 = min(int(math.ceil(uv[:, 1].max())), intrinsics.height - 1)
            if u0 > u1 or v0 > v1:
                continue
            vv, uu = np.mgrid[v0 : v1 + 1, u0 : u1 + 1]
            inside = hull.find_simplex(np.column_stack([uu.ravel(), vv.ravel()]).astype(np.float64)) >= 0
            shade = 20.0 + 60.0 * obstacle.reflectivity
            patch = image[v0 : v1 + 1, u0 : u1 + 1]
            patch[inside.reshape(patch.shape)] = shade
        return np.round(image).astype(np.uint8)

    @staticmethod
    def rasterize_gt(scene: Scene, t: float, spec: GridSpec) -> Tuple[BevGrid, List[ObstacleInstance]]:
        """Footprints by cell-center-in-shape test; point obstacles mark their cell"""
        mask = np.zeros(spec.shape, dtype=bool)
        centers = None
        for obstacle, pose in SimService.obstacles_in_vehicle(scene, t):
            if obstacle.shape == ObstacleShape.POINT:
                idx = geometry_service.world_to_cell(spec, (pose.x, pose.y))
                if idx is not None:
                    mask[idx] = True
                continue
            if centers is None:
                centers = geometry_service.cell_centers(spec)
            local = geometry_service.pose_apply_many(geometry_service.pose_inverse(pose), centers)
            if obstacle.shape == ObstacleShape.BOX:
                mask |= (np.abs(local[..., 0]) <= 0.5 * obstacle.length) & (np.abs(local[..., 1]) <= 0.5 * obstacle.width)
            else:
                mask |= np.hypot(local[..., 0], local[..., 1]) <= obstacle.radius
        grid = BevGrid.labels(spec, mask)
        return grid, metrics_service.extract_obstacles(grid)

    @staticmethod
    def sample_at(scene: Scene, camera_ts: float, uls_ts: float, spec: GridSpec) -> SyntheticSample:
        gt, instances = SimService.rasterize_gt(scene, camera_ts, spec)
        return SyntheticSample(
            image=SimService.render_fisheye(scene, camera_ts),
            uls_frame=SimService.synth_echoes(scene, uls_ts),
            gt_mask=gt,
            gt_instances=instances,
            camera_ts=camera_ts,
            uls_ts=uls_ts,
        )

    # Datasets
    @staticmethod
    def scene_plan(sim: SimConfig) -> List[Tuple[int, Split, str]]:
        """(scene index, split, scene id); splits partition the scenes"""
        plan = []
        index = 0
        for split in (Split.TRAIN, Split.VAL, Split.TEST):
            for _ in range(sim.splits.get(split, 0)):
                plan.append((index, split, f"scene_{index:03d}"))
                index += 1
        return plan

    @staticmethod
    def write_scene(
        config: RunConfig,
        master_seed: int,
        scene_index: int,
        split: Split,
        scene_id: str,
        root: Path,
        layout: SensorLayout,
        calibration: Calibration,
    ) -> int:
        scene, arrivals = SimService.build_scene(config, master_seed, scene_index, scene_id, layout, calibration)
        scene_dir = root / split.value / scene_id
        camera_ts = SimService.camera_timestamps(config.sim)
        frames = [SimService.synth_echoes(scene, t) for t in arrivals]
        pairs = sync_service.match_frames(camera_ts, frames, scene.ego_track)

        storage_service.write_json(scene_dir / "calib.json", calibration.to_dict())
        storage_service.write_json(scene_dir / "layout.json", layout.to_dict())
        storage_service.write_json(scene_dir / "scene.json", scene.to_dict())
        storage_service.write_odometry(scene_dir / "odometry.csv", scene.ego_track)
        storage_service.write_uls_frames(scene_dir / "uls.jsonl", frames)
        for k, pair in enumerate(pairs):
            name = f"{k:06d}"
            storage_service.save_pgm(scene_dir / "images" / f"{name}.pgm", SimService.render_fisheye(scene, pair.camera_ts))
            gt, _ = SimService.rasterize_gt(scene, pair.camera_ts, config.grid)
            storage_service.save_pgm(scene_dir / "gt" / f"{name}.pgm", gt.data[:, :, 0] * 255)

        speed = scene.ego_track[-1].pose.x / max(scene.ego_track[-1].timestamp, 1e-9) * 3600.0
        index = SceneIndex(
            scene_id=scene_id,
            split=split,
            camera_ts=[p.camera_ts for p in pairs],
            uls_ts=arrivals,
            pairs=[p.to_dict() for p in pairs],
            ego_speed_kmh=speed,
        )
        storage_service.write_json(scene_dir / "index.json", index.to_dict())
        logger.info("🎬 %s/%s: %d obstacles, %d frames", split.value, scene_id, len(scene.obstacles), len(pairs))
        return len(pairs)

    @staticmethod
    def generate_dataset(config: RunConfig, seed: int, out_root: Path) -> Dict[str, int]:
        """Write every scene of the plan; returns scene and frame counts"""
        layout = storage_service.config_layout(config)
        calibration = storage_service.config_calibration(config)
        root = Path(out_root)
        try:
            root.mkdir(parents=True, exist_ok=True)
            probe = root / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as e:
            raise SimError(f"cannot write dataset to {root}: {e}")

        plan = SimService.scene_plan(config.sim)
        with ThreadPoolExecutor(max_workers=thread_count()) as executor:
            counts = list(
                executor.map(
                    lambda item: SimService.write_scene(config, seed, item[0], item[1], item[2], root, layout, calibration),
                    plan,
                )
            )
        summary = {split.value: sum(1 for _, s, _ in plan if s == split) for split in Split}
        summary["frames"] = sum(counts)
        return summary


# Create singleton instance
sim_service = SimService()
