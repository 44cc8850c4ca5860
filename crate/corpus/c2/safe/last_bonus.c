x = 0;
for (i = 0; i < N; i++) {
  if (i == N - 1) {
    x = x + 2;
  } else {
    x = x + 1;
  }
}
// assert(x == N + 1)
