"""A scripted stand-in for the holistic pose toolkit, used by the tests."""

import numpy as np

from pose_exporter import layout


class Point:
    def __init__(self, x, y, visibility=1.0):
        self.x = float(x)
        self.y = float(y)
        self.visibility = float(visibility)


class Result:
    def __init__(self, left_hand=None, right_hand=None, pose=None, face=None):
        self.left_hand_landmarks = left_hand
        self.right_hand_landmarks = right_hand
        self.pose_landmarks = pose
        self.face_landmarks = face


def hand(cx, cy, spread=0.02):
    return [Point(cx + spread * (j % 5), cy + spread * (j // 5)) for j in range(21)]


def body_pose(visible_wrists=True, shoulder_y=0.30):
    pts = [Point(0.0, 0.0, 0.0) for _ in range(33)]
    pts[0] = Point(0.50, 0.18)                  # nose
    pts[11] = Point(0.40, shoulder_y)           # left shoulder
    pts[12] = Point(0.60, shoulder_y)           # right shoulder
    pts[13] = Point(0.35, 0.45)
    pts[14] = Point(0.65, 0.45)
    wrist_vis = 1.0 if visible_wrists else 0.1
    pts[15] = Point(0.33, 0.58, wrist_vis)
    pts[16] = Point(0.67, 0.58, wrist_vis)
    pts[23] = Point(0.45, 0.75)
    pts[24] = Point(0.55, 0.75)
    return pts


def face_mesh():
    return [Point(0.5 + 0.0003 * i, 0.2 + 0.0002 * i) for i in range(468)]


def three_frame_script(with_face=False):
    """Frame 1 fully detected, frame 2 loses the left hand, frame 3 loses wrists."""
    face = face_mesh() if with_face else None
    return [
        Result(hand(0.30, 0.55), hand(0.66, 0.56), body_pose(), face),
        Result(None, hand(0.64, 0.52), body_pose(), face),
        Result(hand(0.28, 0.50), hand(0.62, 0.50), body_pose(visible_wrists=False), face),
    ]


class StubEngine:
    def __init__(self, script):
        self.script = list(script)
        self.calls = 0
        self.closed = False

    def process(self, frame):
        result = self.script[self.calls % len(self.script)]
        self.calls += 1
        return result

    def close(self):
        self.closed = True


def stub_reader(num_frames=3, fps=30.0):
    def reader(path):
        if "broken" in path:
            raise IOError(f"cannot decode {path}")
        for _ in range(num_frames):
            yield np.zeros((4, 4, 3), dtype=np.uint8), fps
    return reader
