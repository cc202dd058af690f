# Nodes tests package