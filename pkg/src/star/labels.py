"""Class ids shared across the toolkit.

Activity ids 0..6 follow the evaluation table row order; id 7 is the
unoccupied-scene outcome used by the presence gate.
"""

ACTIVITIES = ("lie_down", "fall", "walk", "pickup", "run", "sit_down", "stand_up")
NO_PERSON = "no_person"
ALL_CLASSES = ACTIVITIES + (NO_PERSON,)

NO_PERSON_ID = len(ACTIVITIES)  # 7

HUMAN_NAMES = {
    "lie_down": "lie down",
    "fall": "fall",
    "walk": "walk",
    "pickup": "pickup",
    "run": "run",
    "sit_down": "sit down",
    "stand_up": "stand up",
    "no_person": "no person",
}


def class_name(class_id: int) -> str:
    return ALL_CLASSES[class_id]
