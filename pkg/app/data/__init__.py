# data package
