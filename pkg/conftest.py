# Puts the repository root on sys.path so tests import cantortree in place.
