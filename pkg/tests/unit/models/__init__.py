# Models tests package