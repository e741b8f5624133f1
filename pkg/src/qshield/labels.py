"""Class taxonomy shared by every component.

Index 0 is the benign class; the remaining four are attack classes. The
false positive rate treats any benign sample routed to an attack class as
a false alarm.
"""

CLASSES = ("benign", "sqli", "xss", "rfi", "dt")
ATTACK_CLASSES = CLASSES[1:]
BENIGN_INDEX = 0

LABEL_TO_INDEX = {label: i for i, label in enumerate(CLASSES)}


def label_index(label: str) -> int:
    try:
        return LABEL_TO_INDEX[label]
    except KeyError:
        raise ValueError(f"unknown label {label!r}; expected one of {CLASSES}") from None
