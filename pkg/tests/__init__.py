# Tests package for lpsketch
