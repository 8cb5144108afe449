# scoring package
