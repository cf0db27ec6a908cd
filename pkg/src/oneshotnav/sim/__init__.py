from .course import (
    Camera, CourseError, CourseSpec, dump_course_spec, generate_course, load_course_spec,
    mirror_course, mirrored_id, validate,
)
from .drive import DriveError, PurePursuit, route_polyline, scripted_drive
from .render import CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH, PoseError, cast_rays, range_scan, render_stereo
from .runs import Frame, RecordedRun, RunFormatError, load_run, save_run
from .vehicle import (
    DT, FPS, MAX_WHEEL_DEG, WHEELBASE_M, VehiclePose, step_vehicle, steering_for_angle, turn_radius,
    wheel_angle, wrap_angle,
)
