# Poll planning package
