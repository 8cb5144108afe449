# metrics package
