# Test package for drowsinet