"""Keypoint layout of the pose-sequence file format.

Per frame: 50 keypoints as (x, y), flattened to 100 values in this order:
left hand [0..21), right hand [21..42), body [42..50). The body block is
nose, left shoulder, right shoulder, left elbow, right elbow, left wrist,
right wrist, mid-hip. Missing detections are (0, 0) with validity False.
"""

NUM_KEYPOINTS = 50
FRAME_FEATURES = 2 * NUM_KEYPOINTS
HAND_POINTS = 21

LEFT_HAND = slice(0, 21)
RIGHT_HAND = slice(21, 42)
BODY = slice(42, 50)

# indices of the 8 body keypoints inside the 50-point layout
NOSE, LEFT_SHOULDER, RIGHT_SHOULDER = 42, 43, 44
LEFT_ELBOW, RIGHT_ELBOW, LEFT_WRIST, RIGHT_WRIST, MID_HIP = 45, 46, 47, 48, 49

# source indices in the full-body landmark list (33-point BlazePose topology)
POSE_LANDMARK_SOURCES = {
    NOSE: 0,
    LEFT_SHOULDER: 11,
    RIGHT_SHOULDER: 12,
    LEFT_ELBOW: 13,
    RIGHT_ELBOW: 14,
    LEFT_WRIST: 15,
    RIGHT_WRIST: 16,
}
LEFT_HIP_SOURCE = 23
RIGHT_HIP_SOURCE = 24

# a fixed 19-landmark subset of the face mesh (brows, eyes, nose, lips),
# exported only with --with-face; the spotting engine never reads it
FACE_LANDMARK_SOURCES = (
    70, 105, 107,        # left brow
    336, 334, 300,       # right brow
    33, 133, 159,        # left eye
    362, 263, 386,       # right eye
    1, 4,                # nose bridge / tip
    61, 291, 13, 14, 17,  # mouth corners, lips, chin
)
NUM_FACE_POINTS = len(FACE_LANDMARK_SOURCES)
