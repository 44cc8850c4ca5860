x = 0;
for (i = 0; i < N; i++) {
  if (N > 3) {
    x = x + 2;
  } else {
    x = x + 1;
  }
}
// assert(x == 2 * N)
